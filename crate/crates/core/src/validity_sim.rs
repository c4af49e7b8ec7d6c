//! Monte Carlo audits of validity properties and growth-curve tables.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eprocess::{stop_index_log, DataView, Dataset, EProcess, RegularizedEProcess, StoppingRule};
use crate::im::{decision_bound_check, im_contour, LossFunction};
use crate::possibility::{credal_membership, Contour, Grid, GridSet, Membership, PriorSampler, Verdict};
use crate::regularization::Regularizer;
use crate::util::{config_hash, replication_seed};

/// Draws used by the credal-membership gate.
pub const MEMBERSHIP_DRAWS: usize = 20_000;
/// α nodes of the credal-membership gate.
pub const MEMBERSHIP_ALPHA_NODES: usize = 99;

/// Data-generating model given the parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSampler {
    /// Z ~ N(θ, sd²).
    Gaussian { sd: f64 },
    /// Z = θ + scale·T with T ~ t(df); θ is the median.
    StudentT { df: f64, scale: f64 },
}

impl ModelSampler {
    pub fn standard_gaussian() -> Self {
        ModelSampler::Gaussian { sd: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ModelSampler::Gaussian { sd } if !(sd > 0.0) => Err(invalid("model sd must be positive")),
            ModelSampler::StudentT { df, scale } if !(df > 0.0 && scale > 0.0) => {
                Err(invalid("model df and scale must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// `n` observations at parameter θ.
    pub fn sample<R: Rng + ?Sized>(&self, theta: f64, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            ModelSampler::Gaussian { sd } => (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    theta + sd * z
                })
                .collect(),
            ModelSampler::StudentT { df, scale } => {
                let t = StudentT::new(df).expect("validated df");
                (0..n).map(|_| theta + scale * t.sample(rng)).collect()
            }
        }
    }
}

/// A validity audit: prior, model, regularized e-process, rules, α grid, replications, seed.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub model: ModelSampler,
    pub prior: PriorSampler,
    /// Contour whose credal set the prior is declared to belong to.
    pub prior_contour: Contour,
    pub ereg: RegularizedEProcess,
    pub rules: Vec<StoppingRule>,
    pub alphas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Canonical text used for the provenance hash.
    pub fn describe(&self) -> String {
        format!(
            "model={:?};prior={:?};contour={};ereg={};rules={:?};alphas={:?};reps={};seed={}",
            self.model,
            self.prior,
            self.prior_contour.label(),
            self.ereg.label(),
            self.rules,
            self.alphas,
            self.reps,
            self.seed
        )
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.prior.validate()?;
        if self.reps < 1000 {
            return Err(invalid(format!("rate checks need at least 1000 replications, got {}", self.reps)));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(invalid("alpha grid must be nonempty and inside (0,1]"));
        }
        if self.rules.is_empty() {
            return Err(invalid("at least one stopping rule is required"));
        }
        for r in &self.rules {
            if !matches!(r, StoppingRule::Fixed { n: 0 }) {
                r.validate()?;
            }
        }
        if self.ereg.dim() != 1 || self.prior.dim() != 1 {
            return Err(invalid("simulation supports one-dimensional parameters"));
        }
        if self.prior_contour.grid().dim() != 1 {
            return Err(Error::DomainMismatch { expected: 1, found: self.prior_contour.grid().dim() });
        }
        Ok(())
    }

    fn horizon(&self) -> usize {
        self.rules.iter().map(|r| r.max_len()).max().unwrap_or(0)
    }
}

/// One (rule, α) row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub rule: String,
    pub alpha: f64,
    pub rate: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// One per-rule mean with its Monte Carlo standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpectationRow {
    pub rule: String,
    pub mean: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Per-rule counts of replications satisfying the pointwise decision certificates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateRow {
    pub rule: String,
    pub replications: usize,
    /// Replications with ratio ≤ 𝔢^reg.
    pub literal_holds: usize,
    /// Replications with ratio ≤ max(1, 𝔢^reg).
    pub capped_holds: usize,
    pub pass: bool,
}

/// Contraction audit for one hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionRow {
    pub hypothesis: usize,
    pub prior_upper: f64,
    pub max_posterior_upper: f64,
    pub prior_lower: f64,
    pub min_posterior_lower: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportProvenance {
    pub seed: u64,
    pub reps: usize,
    pub config_hash: String,
}

/// Results of one audit. `passed` covers rate, expectation and contraction rows;
/// certificate rows carry their own flags.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub check: String,
    pub rates: Vec<RateRow>,
    pub expectations: Vec<ExpectationRow>,
    pub certificates: Vec<CertificateRow>,
    pub contraction: Vec<ContractionRow>,
    pub membership: Option<Membership>,
    pub passed: bool,
    pub provenance: ReportProvenance,
}

impl SimReport {
    fn new(check: &str, seed: u64, reps: usize, description: &str) -> SimReport {
        SimReport {
            check: check.into(),
            rates: Vec::new(),
            expectations: Vec::new(),
            certificates: Vec::new(),
            contraction: Vec::new(),
            membership: None,
            passed: false,
            provenance: ReportProvenance { seed, reps, config_hash: config_hash(description) },
        }
    }

    fn finish(mut self) -> SimReport {
        self.passed = self.rates.iter().all(|r| r.pass)
            && self.expectations.iter().all(|r| r.pass)
            && self.contraction.iter().all(|r| r.pass);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Builds a rate row from an indicator count.
pub fn rate_row(rule: &str, alpha: f64, hits: usize, reps: usize) -> RateRow {
    let rate = hits as f64 / reps as f64;
    let stderr = (rate * (1.0 - rate) / reps as f64).sqrt();
    RateRow { rule: rule.into(), alpha, rate, stderr, pass: rate <= alpha + 3.0 * stderr }
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if !mean.is_finite() || xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn expectation_row(rule: &str, xs: &[f64]) -> ExpectationRow {
    let (mean, stderr) = mean_stderr(xs);
    let pass = mean <= 1.0 + 3.0 * stderr.max(0.0) || mean <= 1.0;
    ExpectationRow { rule: rule.into(), mean, stderr, pass }
}

fn gate_membership(cfg: &SimConfig) -> Result<Membership> {
    let m = credal_membership(
        &cfg.prior_contour,
        &cfg.prior,
        MEMBERSHIP_ALPHA_NODES,
        MEMBERSHIP_DRAWS,
        cfg.seed ^ 0xC3ED_A1F0_0D5E_ED01,
    )?;
    if m.verdict == Verdict::NonMember {
        return Err(Error::NotCredalMember { alpha: m.worst_alpha, margin: m.margin });
    }
    Ok(m)
}

/// One replication: Θ and the stopped prefix length and log 𝔢^reg per rule.
struct Replication {
    theta: f64,
    data: Vec<f64>,
    stops: Vec<(usize, f64)>,
}

fn replicate(cfg: &SimConfig, index: usize) -> Result<Replication> {
    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(cfg.seed, index as u64));
    let theta = cfg.prior.draw(&mut rng)[0];
    let data = cfg.model.sample(theta, cfg.horizon(), &mut rng);
    let path = cfg.ereg.log_path(DataView::Real(&data), &[theta])?;
    let stops = cfg
        .rules
        .iter()
        .map(|rule| {
            let k = match rule {
                StoppingRule::Fixed { n: 0 } => 0,
                r => stop_index_log(*r, &path[1..])?,
            };
            Ok((k, path[k]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Replication { theta, data, stops })
}

fn replicate_all(cfg: &SimConfig) -> Result<Vec<Replication>> {
    (0..cfg.reps).into_par_iter().map(|i| replicate(cfg, i)).collect()
}

/// Empirical `P{𝔢^reg(Z^N, Θ) ≥ 1/α}` per stopping rule and α.
pub fn run_ville_check(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let membership = gate_membership(cfg)?;
    let reps = replicate_all(cfg)?;
    let mut report = SimReport::new("ville", cfg.seed, cfg.reps, &cfg.describe());
    report.membership = Some(membership);
    for (r, rule) in cfg.rules.iter().enumerate() {
        for &alpha in &cfg.alphas {
            let cut = -alpha.ln();
            let hits = reps.iter().filter(|x| x.stops[r].1 >= cut).count();
            report.rates.push(rate_row(&rule.label(), alpha, hits, cfg.reps));
        }
    }
    Ok(report.finish())
}

/// Mean of 𝔢^reg(Z^N, Θ) per stopping rule.
pub fn run_expectation_check(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let membership = gate_membership(cfg)?;
    let reps = replicate_all(cfg)?;
    let mut report = SimReport::new("expectation", cfg.seed, cfg.reps, &cfg.describe());
    report.membership = Some(membership);
    for (r, rule) in cfg.rules.iter().enumerate() {
        let xs: Vec<f64> = reps.iter().map(|x| x.stops[r].1.exp()).collect();
        report.expectations.push(expectation_row(&rule.label(), &xs));
    }
    Ok(report.finish())
}

/// Audits `sup_a ℓ_a(Θ)/Π̄(ℓ_a)`: mean, tail rates and pointwise certificates.
pub fn run_decision_bound_check(cfg: &SimConfig, loss: &LossFunction, grid: &Grid) -> Result<SimReport> {
    cfg.validate()?;
    if grid.dim() != 1 {
        return Err(Error::DomainMismatch { expected: 1, found: grid.dim() });
    }
    let membership = gate_membership(cfg)?;
    let reps = replicate_all(cfg)?;
    let certs: Vec<Vec<(f64, bool, bool)>> = reps
        .par_iter()
        .map(|rep| {
            rep.stops
                .iter()
                .map(|(k, _)| {
                    let im = im_contour(&cfg.ereg, DataView::Real(&rep.data[..*k]), grid)?;
                    let c = decision_bound_check(&im, loss, &[rep.theta])?;
                    Ok((c.max_ratio, c.holds, c.holds_capped))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = SimReport::new(
        "decision",
        cfg.seed,
        cfg.reps,
        &format!("{};loss={};grid={:?}", cfg.describe(), loss.label(), grid),
    );
    report.membership = Some(membership);
    for (r, rule) in cfg.rules.iter().enumerate() {
        let label = rule.label();
        let ratios: Vec<f64> = certs.iter().map(|c| c[r].0).collect();
        for &alpha in &cfg.alphas {
            let hits = ratios.iter().filter(|x| **x >= 1.0 / alpha).count();
            report.rates.push(rate_row(&label, alpha, hits, cfg.reps));
        }
        report.expectations.push(expectation_row(&label, &ratios));
        let literal = certs.iter().filter(|c| c[r].1).count();
        let capped = certs.iter().filter(|c| c[r].2).count();
        report.certificates.push(CertificateRow {
            rule: label,
            replications: cfg.reps,
            literal_holds: literal,
            capped_holds: capped,
            pass: literal == cfg.reps,
        });
    }
    Ok(report.finish())
}

/// Compares the IM's upper/lower probabilities over a family of datasets with the prior's.
pub fn run_contraction_check(
    prior: &Contour,
    ereg: &RegularizedEProcess,
    datasets: &[Dataset],
    hypotheses: &[GridSet],
) -> Result<SimReport> {
    if datasets.is_empty() {
        return Err(invalid("contraction check needs at least one dataset"));
    }
    let grid = prior.grid();
    for h in hypotheses {
        if h.grid() != grid {
            return Err(invalid("hypothesis grid differs from the prior grid"));
        }
        if h.is_empty() {
            return Err(Error::EmptyHypothesis);
        }
    }
    let posts: Vec<Vec<f64>> = datasets
        .par_iter()
        .map(|d| Ok(im_contour(ereg, d.view(), grid)?.values().to_vec()))
        .collect::<Result<Vec<_>>>()?;

    let upper = |v: &[f64], h: &GridSet| h.indices().map(|i| v[i]).fold(0.0, f64::max);
    let lower = |v: &[f64], h: &GridSet| {
        let c = h.complement();
        if c.is_empty() {
            1.0
        } else {
            1.0 - upper(v, &c)
        }
    };
    let mut desc = format!("contraction;prior={};ereg={};datasets={}", prior.label(), ereg.label(), datasets.len());
    for h in hypotheses {
        desc.push_str(&format!(";h{}", h.count()));
    }
    let mut report = SimReport::new("contraction", 0, datasets.len(), &desc);
    for (j, h) in hypotheses.iter().enumerate() {
        let prior_upper = upper(prior.values(), h);
        let prior_lower = lower(prior.values(), h);
        let max_posterior_upper = posts.iter().map(|p| upper(p, h)).fold(0.0, f64::max);
        let min_posterior_lower = posts.iter().map(|p| lower(p, h)).fold(1.0, f64::min);
        let pass = max_posterior_upper >= prior_upper - 1e-9 && min_posterior_lower <= prior_lower + 1e-9;
        report.contraction.push(ContractionRow {
            hypothesis: j,
            prior_upper,
            max_posterior_upper,
            prior_lower,
            min_posterior_lower,
            pass,
        });
    }
    Ok(report.finish())
}

/// Average log 𝔢^reg(z^n, θ*) for n = 1..=n_max, one column per regularizer.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthTable {
    pub labels: Vec<String>,
    pub n_max: usize,
    /// `means[col][n-1]`.
    pub means: Vec<Vec<f64>>,
    pub stderrs: Vec<Vec<f64>>,
    /// Per-replication values `samples[col][n-1][rep]`.
    samples: Vec<Vec<Vec<f64>>>,
}

impl GrowthTable {
    pub fn column(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn mean(&self, col: usize, n: usize) -> f64 {
        self.means[col][n - 1]
    }

    pub fn stderr(&self, col: usize, n: usize) -> f64 {
        self.stderrs[col][n - 1]
    }

    /// Mean and standard error of the paired difference `col a − col b` at `n`.
    pub fn paired_difference(&self, a: usize, b: usize, n: usize) -> (f64, f64) {
        let d: Vec<f64> = self.samples[a][n - 1].iter().zip(&self.samples[b][n - 1]).map(|(x, y)| x - y).collect();
        let (m, se) = mean_stderr(&d);
        (m, if se.is_nan() { 0.0 } else { se })
    }

    /// CSV with header `n,<label>...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["n".to_string()];
        header.extend(self.labels.iter().cloned());
        out.write_record(&header)?;
        for n in 1..=self.n_max {
            let mut row = vec![n.to_string()];
            row.extend(self.means.iter().map(|c| c[n - 1].to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Growth of log 𝔢^reg at a fixed hypothesis θ* when data come from `truth`.
/// All columns share the same simulated data.
#[allow(clippy::too_many_arguments)]
pub fn run_growth_curve(
    model: &ModelSampler,
    truth: f64,
    theta_star: f64,
    base: &EProcess,
    regularizers: &[(String, Regularizer)],
    n_max: usize,
    reps: usize,
    seed: u64,
) -> Result<GrowthTable> {
    model.validate()?;
    if n_max < 10 {
        return Err(invalid("n_max must be at least 10"));
    }
    if reps == 0 || regularizers.is_empty() {
        return Err(invalid("need at least one replication and one regularizer"));
    }
    if base.dim() != 1 {
        return Err(Error::DomainMismatch { expected: 1, found: base.dim() });
    }
    let paths: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, i as u64));
            let z = model.sample(truth, n_max, &mut rng);
            base.log_path(DataView::Real(&z), &[theta_star])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(regularizers.len());
    let mut means = Vec::with_capacity(regularizers.len());
    let mut stderrs = Vec::with_capacity(regularizers.len());
    for (_, rho) in regularizers {
        let lr = rho.log_value(&[theta_star]);
        let col: Vec<Vec<f64>> = (1..=n_max)
            .map(|n| paths.iter().map(|p| crate::eprocess::log_product(lr, p[n])).collect())
            .collect();
        let (m, s): (Vec<f64>, Vec<f64>) = col
            .iter()
            .map(|xs| {
                let (m, s) = mean_stderr(xs);
                (m, if s.is_nan() { 0.0 } else { s })
            })
            .unzip();
        samples.push(col);
        means.push(m);
        stderrs.push(s);
    }
    Ok(GrowthTable {
        labels: regularizers.iter().map(|(l, _)| l.clone()).collect(),
        n_max,
        means,
        stderrs,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::beta_mixture_calibrator;
    use crate::eprocess::{regularize, savage_dickey_gaussian};
    use crate::possibility::{make_prior, PriorKind};
    use crate::regularization::{regularizer_from_contour, vacuous};

    fn grid() -> Grid {
        Grid::line(-4.0, 4.0, 801).unwrap()
    }

    fn calibrated(k: f64) -> (Contour, Regularizer) {
        let q = make_prior(PriorKind::GaussianSurprise { k }, &grid()).unwrap();
        let rho = regularizer_from_contour(&q, &beta_mixture_calibrator(1.0).unwrap()).unwrap();
        (q, rho)
    }

    fn config(prior: PriorSampler, k: Option<f64>, rules: Vec<StoppingRule>, alphas: Vec<f64>, reps: usize) -> SimConfig {
        let (contour, rho) = match k {
            Some(k) => calibrated(k),
            None => (make_prior(PriorKind::Vacuous, &grid()).unwrap(), vacuous()),
        };
        SimConfig {
            model: ModelSampler::standard_gaussian(),
            prior,
            prior_contour: contour,
            ereg: regularize(savage_dickey_gaussian(10.0).unwrap(), rho).unwrap(),
            rules,
            alphas,
            reps,
            seed: 99,
        }
    }

    fn point0() -> PriorSampler {
        PriorSampler::PointMass { at: vec![0.0] }
    }

    #[test]
    fn rate_row_arithmetic() {
        let r = rate_row("x", 0.05, 30, 1000);
        assert_eq!(r.rate, 0.03);
        assert!((r.stderr - (0.03f64 * 0.97 / 1000.0).sqrt()).abs() < 1e-15);
        assert!(r.pass);
        assert!(!rate_row("x", 0.01, 100, 1000).pass);
    }

    #[test]
    fn validation() {
        let few = config(point0(), None, vec![StoppingRule::Fixed { n: 5 }], vec![0.05], 10);
        assert!(run_ville_check(&few).is_err());
        let bad_alpha = config(point0(), None, vec![StoppingRule::Fixed { n: 5 }], vec![1.5], 1000);
        assert!(run_ville_check(&bad_alpha).is_err());
        let no_rules = config(point0(), None, vec![], vec![0.05], 1000);
        assert!(run_ville_check(&no_rules).is_err());
    }

    #[test]
    fn alpha_one_always_passes() {
        let cfg = config(point0(), None, vec![StoppingRule::Fixed { n: 3 }], vec![1.0], 1000);
        let r = run_ville_check(&cfg).unwrap();
        assert!(r.passed);
        assert!(r.rates.iter().all(|row| (0.0..=1.0).contains(&row.rate)));
    }

    #[test]
    fn classical_and_regularized_ville() {
        let plain = config(point0(), None, vec![StoppingRule::Fixed { n: 5 }], vec![0.05], 10_000);
        assert!(run_ville_check(&plain).unwrap().passed);
        let reg = config(
            PriorSampler::Normal { mean: 0.0, var: 0.1 },
            Some(0.1),
            vec![StoppingRule::Threshold { c: 20.0, horizon: 50 }],
            vec![0.05],
            10_000,
        );
        let r = run_ville_check(&reg).unwrap();
        assert!(r.passed, "{:?}", r.rates);
        assert_ne!(r.membership.unwrap().verdict, Verdict::NonMember);
    }

    #[test]
    fn expectation_bounds() {
        let plain = config(point0(), None, vec![StoppingRule::Fixed { n: 10 }], vec![0.05], 5000);
        assert!(run_expectation_check(&plain).unwrap().passed);
        let zero = config(PriorSampler::Normal { mean: 0.0, var: 0.1 }, Some(0.1), vec![StoppingRule::Fixed { n: 0 }], vec![0.05], 20_000);
        let r = run_expectation_check(&zero).unwrap();
        assert!(r.passed, "{:?}", r.expectations);
        assert!(r.expectations[0].mean > 0.5);
    }

    #[test]
    fn non_member_refuses_to_run() {
        // q(θ₀) = 0.3 for gaussian_surprise(0.1).
        let theta0 = (0.1f64 * 1.074_194_170_857_572_2).sqrt();
        let cfg = config(PriorSampler::PointMass { at: vec![theta0] }, Some(0.1), vec![StoppingRule::Fixed { n: 5 }], vec![0.05], 1000);
        assert!(matches!(run_ville_check(&cfg), Err(Error::NotCredalMember { .. })));
    }

    #[test]
    fn reports_are_reproducible() {
        let cfg = config(
            PriorSampler::Normal { mean: 0.0, var: 0.2 },
            Some(0.2),
            vec![StoppingRule::Fixed { n: 4 }, StoppingRule::Threshold { c: 20.0, horizon: 30 }],
            vec![0.05, 0.1],
            2000,
        );
        let a = run_ville_check(&cfg).unwrap().to_json().unwrap();
        let b = run_ville_check(&cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 100;
        assert_ne!(run_ville_check(&other).unwrap().provenance.config_hash, serde_json::from_str::<serde_json::Value>(&a).unwrap()["provenance"]["config_hash"]);
    }

    #[test]
    fn decision_audit_small() {
        let cfg = config(PriorSampler::Normal { mean: 0.0, var: 0.1 }, Some(0.1), vec![StoppingRule::Fixed { n: 5 }], vec![0.05, 1.0], 1000);
        let loss = LossFunction::squared_error((0..=16).map(|i| -2.0 + 0.25 * i as f64).collect()).unwrap();
        let r = run_decision_bound_check(&cfg, &loss, &Grid::line(-4.0, 4.0, 401).unwrap()).unwrap();
        assert!(r.passed, "{:?} {:?}", r.rates, r.expectations);
        let c = &r.certificates[0];
        assert_eq!(c.capped_holds, c.replications);
        assert!(c.literal_holds <= c.capped_holds);
    }

    #[test]
    fn contraction_small() {
        let (q, rho) = calibrated(0.2);
        let ereg = regularize(savage_dickey_gaussian(10.0).unwrap(), rho).unwrap();
        let datasets: Vec<Dataset> = (0..=40).map(|i| Dataset::Real(vec![-4.0 + 0.2 * i as f64; 5])).collect();
        let g = grid();
        let hyps = vec![
            GridSet::from_predicate(&g, |t| t[0] > -0.5 && t[0] < 0.5),
            GridSet::from_predicate(&g, |t| t[0] > 1.0 && t[0] < 2.0),
            GridSet::from_predicate(&g, |t| t[0] < -3.0),
        ];
        let r = run_contraction_check(&q, &ereg, &datasets, &hyps).unwrap();
        assert!(r.passed, "{:?}", r.contraction);
        assert!(r.contraction[0].max_posterior_upper >= 1.0 - 1e-9);
        assert!(run_contraction_check(&q, &ereg, &[], &hyps).is_err());
    }

    #[test]
    fn growth_table_properties() {
        let (_, rho) = calibrated(0.1);
        let regs = vec![("K=0.1".to_string(), rho), ("vacuous".to_string(), vacuous())];
        let base = savage_dickey_gaussian(10.0).unwrap();
        let model = ModelSampler::standard_gaussian();
        let one = run_growth_curve(&model, 0.0, 0.7, &base, &regs, 10, 1, 5).unwrap();
        assert_eq!(one, run_growth_curve(&model, 0.0, 0.7, &base, &regs, 10, 1, 5).unwrap());
        let at_truth = run_growth_curve(&model, 0.0, 0.0, &base, &regs, 10, 500, 5).unwrap();
        for col in 0..2 {
            for n in 1..=5 {
                assert!(at_truth.mean(col, n) <= 0.0);
            }
        }
        let t = run_growth_curve(&model, 0.0, 0.7, &base, &regs, 30, 200, 5).unwrap();
        let (d, se) = t.paired_difference(0, 1, 30);
        assert!(d > 0.0);
        assert!(se < 1e-9);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,K=0.1,vacuous\n"));
        assert_eq!(text.lines().count(), 31);
        assert!(run_growth_curve(&model, 0.0, 0.7, &base, &regs, 5, 10, 5).is_err());
    }
}
