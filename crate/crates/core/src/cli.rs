//! Command-line front end: figure data, the ECMO analysis, a streaming
//! monitor and simulation audits.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::calibration::beta_mixture_calibrator;
use crate::eprocess::{
    composite_test, confidence_region, median_of_sorted, median_quasi_eprocess, parse_line, regularize,
    savage_dickey_gaussian, ware_binomial, ArmCounts, Dataset, EProcess, Record, RegularizedEProcess,
    StoppingRule,
};
use crate::error::{invalid, Error, Result};
use crate::im::{im_contour, marginal_expectation_interval, optimal_action, LossFunction};
use crate::possibility::{make_prior, ware_delta, Axis, Grid, GridSet, PriorKind, PriorSampler};
use crate::regularization::{regularizer_from_contour, vacuous, Regularizer};
use crate::util::config_hash;
use crate::validity_sim::{
    run_contraction_check, run_decision_bound_check, run_expectation_check, run_growth_curve, run_ville_check,
    ModelSampler, SimConfig, SimReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "eposs", version, about = "Regularized e-processes and e-possibilistic inference")]
pub struct Cli {
    /// Configuration file (TOML sections of key = value).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Nodes of the 1D parameter grid.
    #[arg(long, global = true)]
    pub grid_nodes: Option<usize>,
    /// Print the default configuration and exit.
    #[arg(long)]
    pub print_defaults: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the data behind one figure as CSV plus a JSON manifest.
    Figure { id: FigureId },
    /// Run the ECMO/CMT two-arm analysis.
    Ware,
    /// Stream observations and report anytime-valid status lines.
    Monitor {
        /// Observation file; stdin when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run a Monte Carlo validity audit.
    Simulate { check: Check },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FigureId {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    #[value(name = "appD")]
    AppD,
}

impl FigureId {
    fn name(self) -> &'static str {
        match self {
            FigureId::Fig2 => "fig2",
            FigureId::Fig3 => "fig3",
            FigureId::Fig4 => "fig4",
            FigureId::Fig5 => "fig5",
            FigureId::Fig6 => "fig6",
            FigureId::Fig7 => "fig7",
            FigureId::Fig8 => "fig8",
            FigureId::AppD => "appD",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Ville,
    Expectation,
    Decision,
    Contraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub alpha: f64,
    pub grid: GridSection,
    pub calibrator: CalibratorSection,
    pub prior: PriorSection,
    pub eprocess: EProcessSection,
    pub data: DataSection,
    pub figure: FigureSection,
    pub ware: WareSection,
    pub monitor: MonitorSection,
    pub simulate: SimulateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
    pub nodes_2d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibratorSection {
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    /// gaussian_surprise, mean_bound, event_bound, median_prior, ware_joint or vacuous.
    pub kind: String,
    pub k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EProcessSection {
    /// savage_dickey, median or ware.
    pub family: String,
    pub v: f64,
    pub beta: f64,
    pub eta: f64,
    pub theta_hat_0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Optional CSV of observations; when empty, `n` copies of `zbar` are used.
    pub path: String,
    pub n: usize,
    pub zbar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureSection {
    pub zbars: Vec<f64>,
    pub ks: Vec<f64>,
    pub growth_reps: usize,
    pub growth_n_max: usize,
    pub growth_theta: f64,
    pub median_n: usize,
    pub median_centers: Vec<f64>,
    pub actions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WareSection {
    pub survivals_cmt: u64,
    pub deaths_cmt: u64,
    pub survivals_ecmo: u64,
    pub deaths_ecmo: u64,
    pub delta_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSection {
    pub threshold: f64,
    pub h_lower: f64,
    pub h_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub reps: usize,
    /// point_mass or normal.
    pub prior: String,
    pub prior_mean: f64,
    pub prior_var: f64,
    /// Comma-separated: fixed:N, threshold:C:H, horizon:N.
    pub rules: String,
    pub alphas: Vec<f64>,
    pub actions: usize,
    /// θ-grid nodes for the decision audit, over the `[grid]` range.
    pub decision_nodes: usize,
    pub hypotheses: usize,
    pub zbar_nodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20_240_601,
            out_dir: "out".into(),
            alpha: 0.05,
            grid: GridSection::default(),
            calibrator: CalibratorSection::default(),
            prior: PriorSection::default(),
            eprocess: EProcessSection::default(),
            data: DataSection::default(),
            figure: FigureSection::default(),
            ware: WareSection::default(),
            monitor: MonitorSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { lower: -4.0, upper: 4.0, nodes: 4001, nodes_2d: 401 }
    }
}

impl Default for CalibratorSection {
    fn default() -> Self {
        CalibratorSection { kappa: 1.0 }
    }
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection { kind: "gaussian_surprise".into(), k: 0.1 }
    }
}

impl Default for EProcessSection {
    fn default() -> Self {
        EProcessSection { family: "savage_dickey".into(), v: 10.0, beta: 0.18, eta: 0.2, theta_hat_0: 0.0 }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { path: String::new(), n: 5, zbar: 0.5 }
    }
}

impl Default for FigureSection {
    fn default() -> Self {
        FigureSection {
            zbars: vec![0.25, 0.5, 1.0],
            ks: vec![0.1, 0.2, 0.4, 0.8],
            growth_reps: 1000,
            growth_n_max: 50,
            growth_theta: 0.7,
            median_n: 25,
            median_centers: vec![-0.5, 0.0, 0.5],
            actions: 161,
        }
    }
}

impl Default for WareSection {
    fn default() -> Self {
        let c = ArmCounts::ware();
        WareSection {
            survivals_cmt: c.survivals_cmt,
            deaths_cmt: c.deaths_cmt,
            survivals_ecmo: c.survivals_ecmo,
            deaths_ecmo: c.deaths_ecmo,
            delta_nodes: 401,
        }
    }
}

impl Default for MonitorSection {
    fn default() -> Self {
        MonitorSection { threshold: 20.0, h_lower: 0.0, h_upper: 0.0 }
    }
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            reps: 10_000,
            prior: "normal".into(),
            prior_mean: 0.0,
            prior_var: 0.1,
            rules: "fixed:5,fixed:20,threshold:20:100".into(),
            alphas: vec![0.01, 0.05, 0.1],
            actions: 41,
            decision_nodes: 1001,
            hypotheses: 50,
            zbar_nodes: 161,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of every setting that can change results; `out_dir` is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir.clear();
        config_hash(&c.to_toml())
    }

    fn line_grid(&self) -> Result<Grid> {
        Grid::line(self.grid.lower, self.grid.upper, self.grid.nodes)
    }

    fn prior_kind(&self) -> Result<PriorKind> {
        PriorKind::parse(&self.prior.kind, Some(self.prior.k))
    }

    fn regularizer(&self, kind: PriorKind, grid: &Grid) -> Result<Regularizer> {
        if kind == PriorKind::Vacuous {
            return Ok(vacuous());
        }
        let q = make_prior(kind, grid)?;
        regularizer_from_contour(&q, &beta_mixture_calibrator(self.calibrator.kappa)?)
    }

    fn base(&self) -> Result<EProcess> {
        match self.eprocess.family.as_str() {
            "savage_dickey" => savage_dickey_gaussian(self.eprocess.v),
            "median" => median_quasi_eprocess(self.eprocess.eta, self.eprocess.theta_hat_0),
            "ware" => ware_binomial(self.eprocess.beta),
            other => Err(invalid(format!("unknown e-process family {other}"))),
        }
    }

    fn counts(&self) -> ArmCounts {
        let w = &self.ware;
        ArmCounts::new(w.survivals_cmt, w.deaths_cmt, w.survivals_ecmo, w.deaths_ecmo)
    }

    fn dataset(&self) -> Result<Dataset> {
        if self.data.path.is_empty() {
            return Ok(Dataset::Real(vec![self.data.zbar; self.data.n]));
        }
        let f = fs::File::open(&self.data.path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", self.data.path)))?;
        Dataset::from_csv(f)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha must lie in (0,1]"));
        }
        self.line_grid()?;
        if self.grid.nodes_2d < 101 {
            return Err(invalid("nodes_2d must be at least 101"));
        }
        if !self.data.path.is_empty() && !Path::new(&self.data.path).exists() {
            return Err(Error::Data(format!("data file {} does not exist", self.data.path)));
        }
        Ok(())
    }
}

fn parse_rules(text: &str) -> Result<Vec<StoppingRule>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let parts: Vec<&str> = s.split(':').collect();
            let num = |i: usize| -> Result<f64> {
                parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(|| invalid(format!("bad rule {s}")))
            };
            let rule = match parts[0] {
                "fixed" => StoppingRule::Fixed { n: num(1)? as usize },
                "threshold" => StoppingRule::Threshold { c: num(1)?, horizon: num(2)? as usize },
                "horizon" => StoppingRule::Horizon { n: num(1)? as usize },
                _ => return Err(invalid(format!("bad rule {s}"))),
            };
            Ok(rule)
        })
        .collect()
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::OutOfDomain(_) => EXIT_DATA,
        _ => EXIT_USAGE,
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli, stdin, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.display().to_string();
    }
    if let Some(a) = cli.alpha {
        cfg.alpha = a;
    }
    if let Some(n) = cli.grid_nodes {
        cfg.grid.nodes = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    if cli.print_defaults {
        write!(stdout, "{}", RunConfig::default().to_toml())?;
        return Ok(EXIT_OK);
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        None => {
            writeln!(stderr, "no command given; see --help")?;
            Ok(EXIT_USAGE)
        }
        Some(Command::Figure { id }) => {
            let files = cmd_figure(id, &cfg)?;
            for f in files {
                writeln!(stdout, "{}", f.display())?;
            }
            Ok(EXIT_OK)
        }
        Some(Command::Ware) => {
            let report = cmd_ware(&cfg)?;
            let text = serde_json::to_string_pretty(&report)?;
            write_file(&cfg, "ware.json", text.as_bytes())?;
            writeln!(stdout, "{text}")?;
            Ok(EXIT_OK)
        }
        Some(Command::Monitor { input }) => match input {
            Some(p) => {
                let f = fs::File::open(&p).map_err(|e| Error::Data(format!("cannot open {}: {e}", p.display())))?;
                cmd_monitor(&cfg, &mut std::io::BufReader::new(f), stdout, stderr)
            }
            None => cmd_monitor(&cfg, stdin, stdout, stderr),
        },
        Some(Command::Simulate { check }) => {
            let report = cmd_simulate(check, &cfg)?;
            let text = report.to_json()?;
            write_file(&cfg, &format!("simulate_{}.json", report.check), text.as_bytes())?;
            writeln!(stdout, "{text}")?;
            Ok(if report.passed { EXIT_OK } else { EXIT_CHECK })
        }
    }
}

fn write_file(cfg: &RunConfig, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir)?;
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    Ok(path)
}

/// Long-form `(x, y, series)` rows.
struct Series {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Series {
    fn xy() -> Series {
        Series { header: vec!["x", "y", "series"], rows: Vec::new() }
    }

    fn xyz() -> Series {
        Series { header: vec!["theta1", "theta2", "value", "series"], rows: Vec::new() }
    }

    fn push_xy(&mut self, x: f64, y: f64, series: &str) {
        self.rows.push(vec![x.to_string(), y.to_string(), series.to_string()]);
    }

    fn push_xyz(&mut self, x: f64, y: f64, z: f64, series: &str) {
        self.rows.push(vec![x.to_string(), y.to_string(), z.to_string(), series.to_string()]);
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    fn series_names(&self) -> Vec<String> {
        let col = self.header.len() - 1;
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r[col]) {
                names.push(r[col].clone());
            }
        }
        names
    }
}

fn k_label(k: f64) -> String {
    format!("K={k}")
}

fn gaussian_data(n: usize, zbar: f64) -> Dataset {
    Dataset::Real(vec![zbar; n])
}

/// Writes `<id>.csv` (and extra files) plus `<id>.manifest.json`; returns their paths.
pub fn cmd_figure(id: FigureId, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let name = id.name();
    let grid = cfg.line_grid()?;
    let kappa = cfg.calibrator.kappa;
    let sd = savage_dickey_gaussian(cfg.eprocess.v)?;
    let params;
    let mut outputs: Vec<(String, Vec<u8>)> = Vec::new();
    let series_names;

    let gaussian_curves = |kinds: &[(String, PriorKind)], s: &mut Series| -> Result<()> {
        for &zbar in &cfg.figure.zbars {
            let data = gaussian_data(cfg.data.n, zbar);
            for (label, kind) in kinds {
                let ereg = regularize(sd.clone(), cfg.regularizer(*kind, &grid)?)?;
                let logs = ereg.log_values_on(data.view(), &grid)?;
                for (i, l) in logs.iter().enumerate() {
                    s.push_xy(grid.point(i)[0], l.exp(), &format!("zbar={zbar},{label}"));
                }
            }
        }
        Ok(())
    };

    match id {
        FigureId::Fig2 => {
            let mut kinds = vec![("vacuous".to_string(), PriorKind::Vacuous)];
            kinds.extend(cfg.figure.ks.iter().map(|k| (k_label(*k), PriorKind::GaussianSurprise { k: *k })));
            let mut s = Series::xy();
            gaussian_curves(&kinds, &mut s)?;
            params = json!({"n": cfg.data.n, "v": cfg.eprocess.v, "zbars": cfg.figure.zbars, "ks": cfg.figure.ks});
            series_names = s.series_names();
            outputs.push((format!("{name}.csv"), s.to_csv()?));
        }
        FigureId::AppD => {
            let mut kinds = vec![("vacuous".to_string(), PriorKind::Vacuous)];
            for k in &cfg.figure.ks {
                kinds.push((format!("mean_bound(K={k})"), PriorKind::MeanBound { k: *k }));
                kinds.push((format!("event_bound(K={k})"), PriorKind::EventBound { k: *k }));
            }
            let mut s = Series::xy();
            gaussian_curves(&kinds, &mut s)?;
            params = json!({"n": cfg.data.n, "v": cfg.eprocess.v, "zbars": cfg.figure.zbars, "ks": cfg.figure.ks});
            series_names = s.series_names();
            outputs.push((format!("{name}.csv"), s.to_csv()?));
        }
        FigureId::Fig3 => {
            let mut regs = vec![];
            for k in &cfg.figure.ks {
                regs.push((k_label(*k), cfg.regularizer(PriorKind::GaussianSurprise { k: *k }, &grid)?));
            }
            regs.push(("vacuous".to_string(), vacuous()));
            let table = run_growth_curve(
                &ModelSampler::standard_gaussian(),
                0.0,
                cfg.figure.growth_theta,
                &sd,
                &regs,
                cfg.figure.growth_n_max,
                cfg.figure.growth_reps,
                cfg.seed,
            )?;
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            params = json!({
                "truth": 0.0, "theta_star": cfg.figure.growth_theta, "n_max": cfg.figure.growth_n_max,
                "reps": cfg.figure.growth_reps, "v": cfg.eprocess.v
            });
            series_names = table.labels.clone();
            outputs.push((format!("{name}.csv"), buf));
        }
        FigureId::Fig4 => {
            let median = median_quasi_eprocess(cfg.eprocess.eta, cfg.eprocess.theta_hat_0)?;
            let q = make_prior(PriorKind::MedianPrior, &grid)?;
            let rho = regularizer_from_contour(&q, &beta_mixture_calibrator(kappa)?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let t = StudentT::new(2.0).map_err(|e| invalid(e.to_string()))?;
            let mut base: Vec<f64> = (0..cfg.figure.median_n).map(|_| t.sample(&mut rng)).collect();
            let mut sorted = base.clone();
            sorted.sort_by(f64::total_cmp);
            let m0 = median_of_sorted(&sorted);
            base.iter_mut().for_each(|z| *z -= m0);
            let mut s = Series::xy();
            for (i, v) in q.values().iter().enumerate() {
                s.push_xy(grid.point(i)[0], *v, "prior");
            }
            for &c in &cfg.figure.median_centers {
                let data = Dataset::Real(base.iter().map(|z| z + c).collect());
                for (label, r) in [("unregularized", vacuous()), ("regularized", rho.clone())] {
                    let im = im_contour(&regularize(median.clone(), r)?, data.view(), &grid)?;
                    for (i, v) in im.values().iter().enumerate() {
                        s.push_xy(grid.point(i)[0], *v, &format!("median={c},{label}"));
                    }
                }
            }
            params = json!({"n": cfg.figure.median_n, "eta": cfg.eprocess.eta, "centers": cfg.figure.median_centers});
            series_names = s.series_names();
            outputs.push((format!("{name}.csv"), s.to_csv()?));
        }
        FigureId::Fig5 | FigureId::Fig6 => {
            let analysis = ware_analysis(cfg)?;
            let mut s;
            if id == FigureId::Fig5 {
                s = Series::xyz();
                for (label, im) in [("unregularized", &analysis.unreg), ("regularized", &analysis.reg)] {
                    for (i, v) in im.values().iter().enumerate() {
                        let p = analysis.grid.point(i);
                        s.push_xyz(p[0], p[1], *v, label);
                    }
                }
            } else {
                s = Series::xy();
                for (label, iv) in [("unregularized", &analysis.unreg_interval), ("regularized", &analysis.reg_interval)] {
                    let c = &iv.marginal.contour;
                    for (i, v) in c.values().iter().enumerate() {
                        s.push_xy(c.grid().point(i)[0], *v, label);
                    }
                }
            }
            params = json!({"counts": cfg.counts(), "beta": cfg.eprocess.beta, "nodes": cfg.grid.nodes_2d});
            series_names = s.series_names();
            outputs.push((format!("{name}.csv"), s.to_csv()?));
        }
        FigureId::Fig7 | FigureId::Fig8 => {
            let data = cfg.dataset()?;
            let mut s = Series::xy();
            let actions = action_grid(cfg.grid.lower, cfg.grid.upper, cfg.figure.actions);
            let loss = LossFunction::squared_error(actions)?;
            if id == FigureId::Fig7 {
                let im = im_contour(&regularize(sd.clone(), vacuous())?, data.view(), &grid)?;
                for (i, v) in im.values().iter().enumerate() {
                    s.push_xy(grid.point(i)[0], *v, "contour");
                }
                for a in [0.0, cfg.data.zbar] {
                    for i in 0..grid.len() {
                        let x = grid.point(i)[0];
                        s.push_xy(x, (a - x).powi(2), &format!("loss(a={a})"));
                    }
                }
            } else {
                let mut kinds = vec![("vacuous".to_string(), PriorKind::Vacuous)];
                kinds.extend(cfg.figure.ks.iter().map(|k| (k_label(*k), PriorKind::GaussianSurprise { k: *k })));
                for (label, kind) in kinds {
                    let im = im_contour(&regularize(sd.clone(), cfg.regularizer(kind, &grid)?)?, data.view(), &grid)?;
                    for (i, v) in im.values().iter().enumerate() {
                        s.push_xy(grid.point(i)[0], *v, &format!("contour,{label}"));
                    }
                    let report = optimal_action(&im, &loss)?;
                    for p in &report.risk_curve {
                        s.push_xy(p.action, p.upper, &format!("risk,{label}"));
                    }
                }
            }
            params = json!({"n": cfg.data.n, "zbar": cfg.data.zbar, "v": cfg.eprocess.v, "ks": cfg.figure.ks});
            series_names = s.series_names();
            outputs.push((format!("{name}.csv"), s.to_csv()?));
        }
    }

    let manifest = json!({
        "figure": name,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "kappa": kappa,
        "kappa_note": "calibrator shape kappa is a configurable default",
        "grid": {"lower": cfg.grid.lower, "upper": cfg.grid.upper, "nodes": cfg.grid.nodes},
        "parameters": params,
        "series": series_names,
        "files": outputs.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
    });
    let mut paths = Vec::new();
    for (file, bytes) in &outputs {
        paths.push(write_file(cfg, file, bytes)?);
    }
    paths.push(write_file(cfg, &format!("{name}.manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?);
    Ok(paths)
}

fn action_grid(lower: f64, upper: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| lower + (upper - lower) * i as f64 / (n - 1) as f64).collect()
}

struct WareAnalysis {
    grid: Grid,
    unreg: crate::im::IMContour,
    reg: crate::im::IMContour,
    unreg_interval: crate::im::MarginalInterval,
    reg_interval: crate::im::MarginalInterval,
    unreg_ereg: RegularizedEProcess,
    reg_ereg: RegularizedEProcess,
    data: Dataset,
}

fn ware_analysis(cfg: &RunConfig) -> Result<WareAnalysis> {
    let grid = Grid::unit_square(cfg.grid.nodes_2d)?;
    let data = Dataset::Counts(vec![cfg.counts()]);
    let base = ware_binomial(cfg.eprocess.beta)?;
    let q = make_prior(PriorKind::WareJoint, &grid)?;
    let rho = regularizer_from_contour(&q, &beta_mixture_calibrator(cfg.calibrator.kappa)?)?;
    let unreg_ereg = regularize(base.clone(), vacuous())?;
    let reg_ereg = regularize(base, rho)?;
    let unreg = im_contour(&unreg_ereg, data.view(), &grid)?;
    let reg = im_contour(&reg_ereg, data.view(), &grid)?;
    let delta = Axis::new(-1.0, 1.0, cfg.ware.delta_nodes)?;
    let unreg_interval = marginal_expectation_interval(unreg.contour(), ware_delta, &delta)?;
    let reg_interval = marginal_expectation_interval(reg.contour(), ware_delta, &delta)?;
    Ok(WareAnalysis { grid, unreg, reg, unreg_interval, reg_interval, unreg_ereg, reg_ereg, data })
}

/// The two-arm analysis as a JSON value.
pub fn cmd_ware(cfg: &RunConfig) -> Result<serde_json::Value> {
    let a = ware_analysis(cfg)?;
    let diagonal = GridSet::from_predicate(&a.grid, |t| t[1] <= t[0]);
    let variant = |ereg: &RegularizedEProcess, im: &crate::im::IMContour, iv: &crate::im::MarginalInterval| {
        let region = confidence_region(ereg, a.data.view(), cfg.alpha, &a.grid)?;
        let ecmo: Vec<f64> = region.set.indices().map(|i| a.grid.point(i)[1]).collect();
        let cmt: Vec<f64> = region.set.indices().map(|i| a.grid.point(i)[0]).collect();
        let extent = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            [lo, hi]
        };
        let test = composite_test(ereg, a.data.view(), &diagonal, cfg.alpha)?;
        let upper_diag = diagonal.indices().map(|i| im.values()[i]).fold(0.0, f64::max);
        Ok::<_, Error>(json!({
            "region": {
                "alpha": cfg.alpha,
                "nodes": region.set.count(),
                "theta_cmt_extent": extent(&cmt),
                "theta_ecmo_extent": extent(&ecmo),
            },
            "diagonal_test": {
                "hypothesis": "theta_ecmo <= theta_cmt",
                "reject": test.reject,
                "min_log_e": test.min_log_e,
                "argmin": test.argmin,
                "upper_probability": upper_diag,
            },
            "delta_interval": [iv.lower, iv.upper],
            "excluded_delta": iv.marginal.excluded,
        }))
    };
    let delta_curve: Vec<serde_json::Value> = {
        let u = &a.unreg_interval.marginal.contour;
        let r = &a.reg_interval.marginal.contour;
        (0..u.grid().len())
            .map(|i| json!({"delta": u.grid().point(i)[0], "unregularized": u.values()[i], "regularized": r.values()[i]}))
            .collect()
    };
    Ok(json!({
        "counts": cfg.counts(),
        "beta": cfg.eprocess.beta,
        "kappa": cfg.calibrator.kappa,
        "grid_nodes": cfg.grid.nodes_2d,
        "unregularized": variant(&a.unreg_ereg, &a.unreg, &a.unreg_interval)?,
        "regularized": variant(&a.reg_ereg, &a.reg, &a.reg_interval)?,
        "delta_marginal": delta_curve,
    }))
}

/// Streams observations, one status line per accepted record.
pub fn cmd_monitor(cfg: &RunConfig, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let base = cfg.base()?;
    let (grid, hypothesis, mut data) = if base.dim() == 2 {
        let grid = Grid::unit_square(cfg.grid.nodes_2d)?;
        let h = GridSet::from_predicate(&grid, |t| t[1] <= t[0]);
        (grid, h, Dataset::Counts(Vec::new()))
    } else {
        let grid = cfg.line_grid()?;
        let axis = *grid.axis().expect("line grid");
        let (lo, hi) = (cfg.monitor.h_lower, cfg.monitor.h_upper);
        let mut h = GridSet::from_predicate(&grid, |t| t[0] >= lo && t[0] <= hi);
        if h.is_empty() {
            let mut mask = vec![false; grid.len()];
            mask[axis.nearest(0.5 * (lo + hi))] = true;
            h = GridSet::from_mask(&grid, mask)?;
        }
        (grid, h, Dataset::Real(Vec::new()))
    };
    let kind = cfg.prior_kind()?;
    let ereg = regularize(base, cfg.regularizer(kind, &grid)?)?;
    let log_c = cfg.monitor.threshold.ln();
    let mut skipped = 0usize;
    let mut stopped = false;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let pushed = match parse_line(trimmed) {
            Ok(Record::Real(z)) => data.push_real(z),
            Ok(Record::Counts(c)) => data.push_counts(c),
            Err(e) => Err(Error::Data(e)),
        };
        if let Err(e) = pushed {
            skipped += 1;
            writeln!(err, "warning: line {}: {e}; skipped", lineno + 1)?;
            continue;
        }
        let test = composite_test(&ereg, data.view(), &hypothesis, 1.0)?;
        let region = confidence_region(&ereg, data.view(), cfg.alpha, &grid)?;
        let hull = match region.hull {
            Some((a, b)) => format!("[{a:.6},{b:.6}]"),
            None if region.set.is_empty() => "empty".to_string(),
            None => format!("{} nodes", region.set.count()),
        };
        // The first crossing is the stopping time; later lines stay STOP.
        stopped |= test.min_log_e >= log_c;
        let status = if stopped { "STOP" } else { "CONTINUE" };
        writeln!(out, "n={} min_log_e={:.6} hull={} {}", data.len(), test.min_log_e, hull, status)?;
    }
    out.flush()?;
    Ok(if skipped > 0 { EXIT_DATA } else { EXIT_OK })
}

fn sim_config(cfg: &RunConfig) -> Result<SimConfig> {
    let grid = cfg.line_grid()?;
    let kind = cfg.prior_kind()?;
    let prior_contour = make_prior(kind, &grid)?;
    let prior = match cfg.simulate.prior.as_str() {
        "point_mass" => PriorSampler::PointMass { at: vec![cfg.simulate.prior_mean] },
        "normal" => PriorSampler::Normal { mean: cfg.simulate.prior_mean, var: cfg.simulate.prior_var },
        other => return Err(invalid(format!("unknown simulation prior {other}"))),
    };
    Ok(SimConfig {
        model: ModelSampler::standard_gaussian(),
        prior,
        prior_contour,
        ereg: regularize(cfg.base()?, cfg.regularizer(kind, &grid)?)?,
        rules: parse_rules(&cfg.simulate.rules)?,
        alphas: cfg.simulate.alphas.clone(),
        reps: cfg.simulate.reps,
        seed: cfg.seed,
    })
}

/// Random sub-intervals of the grid used by the contraction audit.
pub fn random_intervals(grid: &Grid, count: usize, lo: f64, hi: f64, seed: u64) -> Vec<GridSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let a: f64 = rng.random_range(lo..hi);
            let b: f64 = rng.random_range(lo..hi);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            let h = GridSet::from_predicate(grid, |t| t[0] >= a && t[0] <= b);
            if !h.is_empty() && !h.complement().is_empty() {
                break h;
            }
        })
        .collect()
}

/// Dispatches one validity audit.
pub fn cmd_simulate(check: Check, cfg: &RunConfig) -> Result<SimReport> {
    match check {
        Check::Ville => run_ville_check(&sim_config(cfg)?),
        Check::Expectation => run_expectation_check(&sim_config(cfg)?),
        Check::Decision => {
            let sc = sim_config(cfg)?;
            let loss = LossFunction::squared_error(action_grid(cfg.grid.lower, cfg.grid.upper, cfg.simulate.actions))?;
            let grid = Grid::line(cfg.grid.lower, cfg.grid.upper, cfg.simulate.decision_nodes)?;
            run_decision_bound_check(&sc, &loss, &grid)
        }
        Check::Contraction => {
            let grid = cfg.line_grid()?;
            let kind = cfg.prior_kind()?;
            let prior = make_prior(kind, &grid)?;
            let ereg = regularize(cfg.base()?, cfg.regularizer(kind, &grid)?)?;
            let zs = action_grid(cfg.grid.lower, cfg.grid.upper, cfg.simulate.zbar_nodes);
            let datasets: Vec<Dataset> = zs.iter().map(|z| gaussian_data(cfg.data.n.max(1), *z)).collect();
            let hyps = random_intervals(&grid, cfg.simulate.hypotheses, cfg.grid.lower, cfg.grid.upper, cfg.seed);
            run_contraction_check(&prior, &ereg, &datasets, &hyps)
        }
    }
}
