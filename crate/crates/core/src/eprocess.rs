//! Concrete e-process families, the regularized product, stopping rules and
//! the test / confidence-region procedures built on them.

use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::possibility::{Grid, GridSet};
use crate::regularization::Regularizer;

/// Success/failure counts for the two arms of a binomial comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub survivals_cmt: u64,
    pub deaths_cmt: u64,
    pub survivals_ecmo: u64,
    pub deaths_ecmo: u64,
}

impl ArmCounts {
    pub fn new(survivals_cmt: u64, deaths_cmt: u64, survivals_ecmo: u64, deaths_ecmo: u64) -> Self {
        ArmCounts { survivals_cmt, deaths_cmt, survivals_ecmo, deaths_ecmo }
    }

    /// The trial counts used in the ECMO example: CMT 6/4, ECMO 9/0.
    pub fn ware() -> Self {
        ArmCounts::new(6, 4, 9, 0)
    }

    fn add(self, o: ArmCounts) -> ArmCounts {
        ArmCounts::new(
            self.survivals_cmt + o.survivals_cmt,
            self.deaths_cmt + o.deaths_cmt,
            self.survivals_ecmo + o.survivals_ecmo,
            self.deaths_ecmo + o.deaths_ecmo,
        )
    }
}

/// An append-only data stream.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Real(Vec<f64>),
    /// Count records; a prefix sums its records.
    Counts(Vec<ArmCounts>),
}

/// Borrowed prefix of a [`Dataset`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DataView<'a> {
    Real(&'a [f64]),
    Counts(&'a [ArmCounts]),
}

impl<'a> DataView<'a> {
    pub fn len(&self) -> usize {
        match self {
            DataView::Real(z) => z.len(),
            DataView::Counts(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn totals(&self) -> Option<ArmCounts> {
        match self {
            DataView::Counts(c) => Some(c.iter().fold(ArmCounts::default(), |a, b| a.add(*b))),
            DataView::Real(_) => None,
        }
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.view().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn view(&self) -> DataView<'_> {
        match self {
            Dataset::Real(z) => DataView::Real(z),
            Dataset::Counts(c) => DataView::Counts(c),
        }
    }

    /// The first `n` records.
    pub fn prefix(&self, n: usize) -> Result<DataView<'_>> {
        if n > self.len() {
            return Err(invalid(format!("prefix {n} exceeds data length {}", self.len())));
        }
        Ok(match self {
            Dataset::Real(z) => DataView::Real(&z[..n]),
            Dataset::Counts(c) => DataView::Counts(&c[..n]),
        })
    }

    pub fn push_real(&mut self, z: f64) -> Result<()> {
        match self {
            Dataset::Real(v) if z.is_finite() => {
                v.push(z);
                Ok(())
            }
            Dataset::Real(_) => Err(Error::Data(format!("non-finite observation {z}"))),
            Dataset::Counts(_) => Err(Error::Data("count dataset cannot take a real observation".into())),
        }
    }

    pub fn push_counts(&mut self, c: ArmCounts) -> Result<()> {
        match self {
            Dataset::Counts(v) => {
                v.push(c);
                Ok(())
            }
            Dataset::Real(_) => Err(Error::Data("real dataset cannot take a count record".into())),
        }
    }

    /// Reads a headerless CSV: one value per row, or four counts per row.
    pub fn from_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
        let mut data: Option<Dataset> = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let fields: Vec<&str> = rec.iter().map(str::trim).collect();
            if fields.iter().all(|f| f.is_empty()) {
                continue;
            }
            let row = parse_record(&fields).map_err(|e| Error::Data(format!("row {}: {e}", line + 1)))?;
            match (&mut data, row) {
                (None, Record::Real(z)) => data = Some(Dataset::Real(vec![z])),
                (None, Record::Counts(c)) => data = Some(Dataset::Counts(vec![c])),
                (Some(d), Record::Real(z)) => d.push_real(z)?,
                (Some(d), Record::Counts(c)) => d.push_counts(c)?,
            }
        }
        data.ok_or_else(|| Error::Data("no observations".into()))
    }
}

/// One parsed observation line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Record {
    Real(f64),
    Counts(ArmCounts),
}

/// Parses a record from its comma-separated fields.
pub fn parse_record(fields: &[&str]) -> std::result::Result<Record, String> {
    match fields.len() {
        1 => {
            let z: f64 = fields[0].parse().map_err(|_| format!("not a number: {:?}", fields[0]))?;
            if !z.is_finite() {
                return Err(format!("non-finite value {z}"));
            }
            Ok(Record::Real(z))
        }
        4 => {
            let mut c = [0u64; 4];
            for (slot, f) in c.iter_mut().zip(fields) {
                *slot = f.parse().map_err(|_| format!("not a count: {f:?}"))?;
            }
            Ok(Record::Counts(ArmCounts::new(c[0], c[1], c[2], c[3])))
        }
        n => Err(format!("expected 1 or 4 fields, found {n}")),
    }
}

/// Reads one record per line from a text stream (used by the monitor).
pub fn parse_line(line: &str) -> std::result::Result<Record, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    parse_record(&fields)
}

/// E-process families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EProcess {
    /// Gaussian mean with unit variance and a N(0, v) mixing density.
    SavageDickey { v: f64 },
    /// Two-arm binomial with add-β plug-in estimates.
    WareBinomial { beta: f64 },
    /// Median quasi-likelihood with learning rate η.
    MedianQuasi { eta: f64, theta_hat_0: f64 },
}

pub fn savage_dickey_gaussian(v: f64) -> Result<EProcess> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(format!("v must be positive, got {v}")));
    }
    Ok(EProcess::SavageDickey { v })
}

/// The binomial family; counts are supplied as a [`Dataset::Counts`].
pub fn ware_binomial(beta: f64) -> Result<EProcess> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(EProcess::WareBinomial { beta })
}

pub fn median_quasi_eprocess(eta: f64, theta_hat_0: f64) -> Result<EProcess> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    if !theta_hat_0.is_finite() {
        return Err(invalid("theta_hat_0 must be finite"));
    }
    Ok(EProcess::MedianQuasi { eta, theta_hat_0 })
}

/// Largest learning rate for the median family given density floor ε.
pub fn eta_upper_bound(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(2.0 * epsilon)
}

/// Sufficient statistics of a data prefix for one family.
#[derive(Clone, Debug, PartialEq)]
pub enum Prepared {
    SavageDickey { v: f64, n: usize, mean: f64 },
    Ware { counts: ArmCounts, log_numerator: f64 },
    Median { eta: f64, z: Vec<f64>, predicted_loss: f64 },
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn binomial_loglik(s: u64, d: u64, theta: f64) -> f64 {
    xlogy(s as f64, theta) + xlogy(d as f64, 1.0 - theta)
}

fn sd_log(v: f64, n: usize, mean: f64, theta: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let nv1 = n * v + 1.0;
    -0.5 * nv1.ln() + 0.5 * n * (theta - mean).powi(2) - 0.5 * (n / nv1) * mean * mean
}

/// Sample median; even sizes use the mean of the two middle order statistics.
pub fn median_of_sorted(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// Predictions θ̂^{i−1} for i = 1..n.
fn median_predictions(z: &[f64], theta_hat_0: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = Vec::with_capacity(z.len());
    let mut out = Vec::with_capacity(z.len());
    for &zi in z {
        out.push(if sorted.is_empty() { theta_hat_0 } else { median_of_sorted(&sorted) });
        let pos = sorted.partition_point(|x| *x < zi);
        sorted.insert(pos, zi);
    }
    out
}

impl Prepared {
    /// `ln e_θ(z^n)`; may be `+∞`.
    pub fn log_e(&self, theta: &[f64]) -> f64 {
        match self {
            Prepared::SavageDickey { v, n, mean } => sd_log(*v, *n, *mean, theta[0]),
            Prepared::Ware { counts, log_numerator } => {
                let (tc, te) = (theta[0], theta[1]);
                if !(0.0..=1.0).contains(&tc) || !(0.0..=1.0).contains(&te) {
                    return f64::INFINITY;
                }
                let den = binomial_loglik(counts.survivals_cmt, counts.deaths_cmt, tc)
                    + binomial_loglik(counts.survivals_ecmo, counts.deaths_ecmo, te);
                log_numerator - den
            }
            Prepared::Median { eta, z, predicted_loss } => {
                let loss: f64 = z.iter().map(|zi| (zi - theta[0]).abs()).sum();
                -eta * (predicted_loss - loss)
            }
        }
    }
}

impl EProcess {
    /// Parameter dimension.
    pub fn dim(&self) -> usize {
        match self {
            EProcess::WareBinomial { .. } => 2,
            _ => 1,
        }
    }

    pub fn label(&self) -> String {
        match self {
            EProcess::SavageDickey { v } => format!("savage_dickey(v={v})"),
            EProcess::WareBinomial { beta } => format!("ware_binomial(beta={beta})"),
            EProcess::MedianQuasi { eta, theta_hat_0 } => format!("median_quasi(eta={eta},theta0={theta_hat_0})"),
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DomainMismatch { expected: self.dim(), found: theta.len() });
        }
        Ok(())
    }

    /// Summarizes a data prefix for repeated evaluation across θ.
    pub fn prepare(&self, data: DataView<'_>) -> Result<Prepared> {
        match (self, data) {
            (EProcess::SavageDickey { v }, DataView::Real(z)) => {
                let mean = if z.is_empty() { 0.0 } else { z.iter().sum::<f64>() / z.len() as f64 };
                Ok(Prepared::SavageDickey { v: *v, n: z.len(), mean })
            }
            (EProcess::WareBinomial { beta }, DataView::Counts(_)) => {
                let c = data.totals().unwrap_or_default();
                let hat = |s: u64, d: u64| (s as f64 + beta) / ((s + d) as f64 + 2.0 * beta);
                let hc = hat(c.survivals_cmt, c.deaths_cmt);
                let he = hat(c.survivals_ecmo, c.deaths_ecmo);
                let log_numerator = binomial_loglik(c.survivals_cmt, c.deaths_cmt, hc)
                    + binomial_loglik(c.survivals_ecmo, c.deaths_ecmo, he);
                Ok(Prepared::Ware { counts: c, log_numerator })
            }
            (EProcess::MedianQuasi { eta, theta_hat_0 }, DataView::Real(z)) => {
                let pred = median_predictions(z, *theta_hat_0);
                let predicted_loss = z.iter().zip(&pred).map(|(zi, p)| (zi - p).abs()).sum();
                Ok(Prepared::Median { eta: *eta, z: z.to_vec(), predicted_loss })
            }
            _ => Err(Error::Data(format!("{} cannot use this data type", self.label()))),
        }
    }

    /// `ln e_θ(z^n)` for the whole view.
    pub fn log_value(&self, data: DataView<'_>, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(self.prepare(data)?.log_e(theta))
    }

    /// `ln e_θ(z^k)` for k = 0..=n; entry 0 is the empty prefix.
    pub fn log_path(&self, data: DataView<'_>, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut out = Vec::with_capacity(data.len() + 1);
        out.push(0.0);
        match (self, data) {
            (EProcess::SavageDickey { v }, DataView::Real(z)) => {
                let mut sum = 0.0;
                for (k, zi) in z.iter().enumerate() {
                    sum += zi;
                    let n = k + 1;
                    out.push(sd_log(*v, n, sum / n as f64, theta[0]));
                }
            }
            (EProcess::MedianQuasi { eta, theta_hat_0 }, DataView::Real(z)) => {
                let pred = median_predictions(z, *theta_hat_0);
                let mut acc = 0.0;
                for (zi, p) in z.iter().zip(&pred) {
                    acc += -eta * ((zi - p).abs() - (zi - theta[0]).abs());
                    out.push(acc);
                }
            }
            (EProcess::WareBinomial { .. }, DataView::Counts(c)) => {
                for k in 1..=c.len() {
                    out.push(self.prepare(DataView::Counts(&c[..k]))?.log_e(theta));
                }
            }
            _ => return Err(Error::Data(format!("{} cannot use this data type", self.label()))),
        }
        Ok(out)
    }
}

type RhoCache = Arc<Mutex<Option<(Grid, Arc<Vec<f64>>)>>>;

/// `ρ(θ)·e_θ(z^n)`.
#[derive(Clone, Debug)]
pub struct RegularizedEProcess {
    base: EProcess,
    rho: Regularizer,
    // ln ρ on the most recent grid; ρ is costly and grids repeat across datasets.
    rho_cache: RhoCache,
}

/// ln ρ + ln e with the convention 0·∞ = 0.
pub(crate) fn log_product(log_rho: f64, log_e: f64) -> f64 {
    if log_rho == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        log_rho + log_e
    }
}

/// Merges an e-process with a regularizer over the same parameter space.
pub fn regularize(base: EProcess, rho: Regularizer) -> Result<RegularizedEProcess> {
    if let Some(d) = rho.dim() {
        if d != base.dim() {
            return Err(Error::DomainMismatch { expected: base.dim(), found: d });
        }
    }
    Ok(RegularizedEProcess { base, rho, rho_cache: Arc::default() })
}

/// A regularized e-process bound to a data prefix.
#[derive(Clone, Debug)]
pub struct PreparedReg {
    prepared: Prepared,
    rho: Regularizer,
}

impl PreparedReg {
    pub fn log_value(&self, theta: &[f64]) -> f64 {
        log_product(self.rho.log_value(theta), self.prepared.log_e(theta))
    }

    pub fn log_base(&self, theta: &[f64]) -> f64 {
        self.prepared.log_e(theta)
    }
}

impl RegularizedEProcess {
    pub fn base(&self) -> &EProcess {
        &self.base
    }

    pub fn rho(&self) -> &Regularizer {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn label(&self) -> String {
        format!("{} x {}", self.base.label(), self.rho.label())
    }

    pub fn prepare(&self, data: DataView<'_>) -> Result<PreparedReg> {
        Ok(PreparedReg { prepared: self.base.prepare(data)?, rho: self.rho.clone() })
    }

    /// `ln 𝔢^reg(z^n, θ)`.
    pub fn log_value(&self, data: DataView<'_>, theta: &[f64]) -> Result<f64> {
        self.base.check_theta(theta)?;
        Ok(self.prepare(data)?.log_value(theta))
    }

    /// `ln 𝔢^reg(z^k, θ)` for k = 0..=n.
    pub fn log_path(&self, data: DataView<'_>, theta: &[f64]) -> Result<Vec<f64>> {
        let lr = self.rho.log_value(theta);
        Ok(self.base.log_path(data, theta)?.into_iter().map(|le| log_product(lr, le)).collect())
    }

    /// Log values on every grid node.
    pub fn log_values_on(&self, data: DataView<'_>, grid: &Grid) -> Result<Vec<f64>> {
        if grid.dim() != self.dim() {
            return Err(Error::DomainMismatch { expected: self.dim(), found: grid.dim() });
        }
        let log_rho = self.log_rho_on(grid);
        let p = self.base.prepare(data)?;
        let d = grid.dim();
        Ok((0..grid.len())
            .map(|i| {
                let t = grid.point(i);
                log_product(log_rho[i], p.log_e(&t[..d]))
            })
            .collect())
    }

    /// `ln ρ` on every grid node, cached per grid.
    pub fn log_rho_on(&self, grid: &Grid) -> Arc<Vec<f64>> {
        let mut slot = self.rho_cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((g, v)) = slot.as_ref() {
            if g == grid {
                return v.clone();
            }
        }
        let v = Arc::new(grid.map(&|t: &[f64]| self.rho.log_value(t)));
        *slot = Some((grid.clone(), v.clone()));
        v
    }
}

/// When to stop observing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StoppingRule {
    Fixed { n: usize },
    Threshold { c: f64, horizon: usize },
    Horizon { n: usize },
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StoppingRule::Threshold { c, horizon } => {
                if !(c > 0.0) || horizon == 0 {
                    return Err(invalid("threshold rule needs c > 0 and horizon ≥ 1"));
                }
            }
            StoppingRule::Horizon { n: 0 } => return Err(invalid("horizon must be ≥ 1")),
            _ => {}
        }
        Ok(())
    }

    /// Longest prefix the rule can look at.
    pub fn max_len(&self) -> usize {
        match *self {
            StoppingRule::Fixed { n } | StoppingRule::Horizon { n } => n,
            StoppingRule::Threshold { horizon, .. } => horizon,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            StoppingRule::Fixed { n } => format!("fixed({n})"),
            StoppingRule::Threshold { c, horizon } => format!("threshold({c},{horizon})"),
            StoppingRule::Horizon { n } => format!("horizon({n})"),
        }
    }
}

/// Stopping index on a path of e-values indexed 1..=len.
pub fn stop_index(rule: StoppingRule, epath: &[f64]) -> Result<usize> {
    let logs: Vec<f64> = epath.iter().map(|e| e.ln()).collect();
    stop_index_log(rule, &logs)
}

/// [`stop_index`] on log e-values. A threshold rule that never fires stops at
/// its horizon, truncated to the path length.
pub fn stop_index_log(rule: StoppingRule, log_path: &[f64]) -> Result<usize> {
    rule.validate()?;
    if log_path.is_empty() && !matches!(rule, StoppingRule::Fixed { n: 0 }) {
        return Err(invalid("empty e-process path"));
    }
    match rule {
        StoppingRule::Fixed { n } => {
            if n > log_path.len() {
                Err(invalid(format!("fixed({n}) beyond path length {}", log_path.len())))
            } else {
                Ok(n)
            }
        }
        StoppingRule::Threshold { c, horizon } => {
            let h = horizon.min(log_path.len());
            let lc = c.ln();
            Ok(log_path[..h].iter().position(|l| *l >= lc).map_or(h, |i| i + 1))
        }
        StoppingRule::Horizon { n } => Ok(n.min(log_path.len())),
    }
}

/// A confidence set on a grid.
#[derive(Clone, Debug)]
pub struct Region {
    pub set: GridSet,
    /// Interval hull on a line grid.
    pub hull: Option<(f64, f64)>,
    pub warning: Option<String>,
}

/// `{θ : 𝔢^reg(z^n, θ) ≤ 1/α}` on the grid.
pub fn confidence_region(ereg: &RegularizedEProcess, data: DataView<'_>, alpha: f64, grid: &Grid) -> Result<Region> {
    check_alpha(alpha)?;
    let logs = ereg.log_values_on(data, grid)?;
    let cut = -alpha.ln();
    let set = GridSet::from_mask(grid, logs.iter().map(|l| *l <= cut).collect())?;
    let warning = set.is_empty().then(|| "confidence region is empty on the grid".to_string());
    let hull = set.hull();
    Ok(Region { set, hull, warning })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0,1], got {alpha}")))
    }
}

/// Outcome of a composite test.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestOutcome {
    pub reject: bool,
    /// Minimum of ln 𝔢^reg over the hypothesis.
    pub min_log_e: f64,
    pub argmin: Vec<f64>,
}

/// Rejects `H` iff `min_{θ∈H} 𝔢^reg > 1/α`.
pub fn composite_test(
    ereg: &RegularizedEProcess,
    data: DataView<'_>,
    hypothesis: &GridSet,
    alpha: f64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if hypothesis.is_empty() {
        return Err(Error::EmptyHypothesis);
    }
    let grid = hypothesis.grid();
    if grid.dim() != ereg.dim() {
        return Err(Error::DomainMismatch { expected: ereg.dim(), found: grid.dim() });
    }
    let p = ereg.prepare(data)?;
    let d = grid.dim();
    let mut best = (f64::INFINITY, usize::MAX);
    for i in hypothesis.indices() {
        let pt = grid.point(i);
        let l = p.log_value(&pt[..d]);
        if l < best.0 || best.1 == usize::MAX {
            best = (l, i);
        }
    }
    Ok(TestOutcome { reject: best.0 > -alpha.ln(), min_log_e: best.0, argmin: grid.point_vec(best.1) })
}

/// Writes `n,theta,log_e` rows for k = 0..=n at each θ.
pub fn write_path_csv<W: Write>(
    w: W,
    ereg: &RegularizedEProcess,
    data: DataView<'_>,
    thetas: &[Vec<f64>],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "theta", "log_e"])?;
    for theta in thetas {
        let path = ereg.log_path(data, theta)?;
        let label = theta.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(";");
        for (k, l) in path.iter().enumerate() {
            out.write_record(&[k.to_string(), label.clone(), l.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `ln` of the mixture ratio `∫ N(z̄|t,1/n) N(t|0,v) dt / N(z̄|θ,1/n)` by
/// composite Simpson on `[z̄ − 10√(v+1), z̄ + 10√(v+1)]`.
pub fn savage_dickey_quadrature_oracle(v: f64, data: &[f64], theta: f64, quad_nodes: usize) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let n = data.len() as f64;
    let zbar = data.iter().sum::<f64>() / n;
    let m = (quad_nodes.max(10_000) / 2) * 2;
    let half = 10.0 * (v + 1.0).sqrt();
    let (a, b) = (zbar - half, zbar + half);
    let h = (b - a) / m as f64;
    // log of N(z̄|t,1/n) N(t|0,v) up to the constant shared with the denominator
    let log_f = |t: f64| -0.5 * n * (zbar - t).powi(2) - 0.5 * t * t / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
    let logs: Vec<f64> = (0..=m).map(|i| log_f(a + i as f64 * h)).collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (i, l) in logs.iter().enumerate() {
        let w = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * (l - peak).exp();
    }
    let log_num = peak + (sum * h / 3.0).ln();
    let log_den = -0.5 * n * (zbar - theta).powi(2);
    log_num - log_den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::beta_mixture_calibrator;
    use crate::possibility::{make_prior, PriorKind};
    use crate::regularization::{regularizer_from_contour, vacuous};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sd() -> EProcess {
        savage_dickey_gaussian(10.0).unwrap()
    }

    fn five(zbar: f64) -> Dataset {
        Dataset::Real(vec![zbar; 5])
    }

    #[test]
    fn savage_dickey_values() {
        let e = sd();
        assert_eq!(e.log_value(DataView::Real(&[]), &[0.3]).unwrap(), 0.0);
        let d = five(0.5);
        // −½ln51 + (5/2)θ² terms at θ = 0 and θ = z̄.
        assert_relative_eq!(e.log_value(d.view(), &[0.0]).unwrap().exp(), 0.258_42, max_relative = 1e-4);
        assert_relative_eq!(e.log_value(d.view(), &[0.5]).unwrap().exp(), 0.138_31, max_relative = 1e-4);
        let want = -0.5 * 51f64.ln() + 2.5 * 0.25 - 0.5 * (5.0 / 51.0) * 0.25;
        assert_abs_diff_eq!(e.log_value(d.view(), &[0.0]).unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn savage_dickey_matches_quadrature() {
        let d = five(0.5);
        for theta in [0.0, 0.5, -1.3] {
            let closed = sd().log_value(d.view(), &[theta]).unwrap().exp();
            let quad = savage_dickey_quadrature_oracle(10.0, &[0.5; 5], theta, 20_000).exp();
            assert_relative_eq!(closed, quad, max_relative = 1e-6);
        }
        let one = [0.8];
        let closed = sd().log_value(DataView::Real(&one), &[0.8]).unwrap().exp();
        assert_relative_eq!(closed, savage_dickey_quadrature_oracle(10.0, &one, 0.8, 20_000).exp(), max_relative = 1e-6);
        let small = savage_dickey_gaussian(0.01).unwrap();
        let closed = small.log_value(d.view(), &[0.2]).unwrap().exp();
        assert_relative_eq!(closed, savage_dickey_quadrature_oracle(0.01, &[0.5; 5], 0.2, 20_000).exp(), max_relative = 1e-5);
    }

    #[test]
    fn ware_values() {
        let e = ware_binomial(0.18).unwrap();
        let d = Dataset::Counts(vec![ArmCounts::ware()]);
        assert_relative_eq!(e.log_value(d.view(), &[0.6, 1.0]).unwrap().exp(), 0.8394, max_relative = 1e-3);
        let hat = [6.18 / 10.36, 9.18 / 9.36];
        assert_abs_diff_eq!(e.log_value(d.view(), &hat).unwrap(), 0.0, epsilon = 1e-12);
        assert!(e.log_value(d.view(), &[0.99, 0.01]).unwrap().exp() > 20.0);
        assert_eq!(e.log_value(d.view(), &[0.5, 0.0]).unwrap(), f64::INFINITY);
        assert_eq!(e.log_value(d.view(), &[0.5, 1.2]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ware_plug_in_exceeds_one_in_expectation() {
        // One CMT trial at θ = 0.5: either outcome gives e = 2·1.18/1.36.
        let e = ware_binomial(0.18).unwrap();
        let mut mean = 0.0;
        for c in [ArmCounts::new(1, 0, 0, 0), ArmCounts::new(0, 1, 0, 0)] {
            mean += 0.5 * e.log_value(DataView::Counts(&[c]), &[0.5, 0.5]).unwrap().exp();
        }
        assert_relative_eq!(mean, 2.0 * 1.18 / 1.36, max_relative = 1e-12);
        assert!(mean > 1.7);
    }

    #[test]
    fn median_values() {
        let e = median_quasi_eprocess(0.2, 0.0).unwrap();
        let z = [1.0, 2.0, 3.0];
        assert_relative_eq!(e.log_value(DataView::Real(&z), &[0.0]).unwrap().exp(), 0.5f64.exp(), max_relative = 1e-12);
        assert_eq!(e.log_value(DataView::Real(&[]), &[4.0]).unwrap(), 0.0);
        let c = median_quasi_eprocess(0.2, 1.5).unwrap();
        assert_eq!(c.log_value(DataView::Real(&[1.5; 6]), &[1.5]).unwrap(), 0.0);
        assert_eq!(median_of_sorted(&[1.0, 2.0, 4.0, 9.0]), 3.0);
        assert_eq!(eta_upper_bound(0.1).unwrap(), 0.2);
        assert_eq!(eta_upper_bound(0.05).unwrap(), 0.1);
        assert_eq!(eta_upper_bound(0.5).unwrap(), 1.0);
    }

    #[test]
    fn bad_parameters() {
        assert!(savage_dickey_gaussian(0.0).is_err());
        assert!(ware_binomial(-1.0).is_err());
        assert!(median_quasi_eprocess(0.0, 0.0).is_err());
        assert!(eta_upper_bound(0.0).is_err());
        assert!(sd().log_value(DataView::Counts(&[ArmCounts::ware()]), &[0.0]).is_err());
        assert!(sd().log_value(DataView::Real(&[1.0]), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn regularize_vacuous_and_infinite() {
        let d = five(0.5);
        let plain = regularize(sd(), vacuous()).unwrap();
        for t in [-1.0, 0.0, 0.7] {
            assert_eq!(plain.log_value(d.view(), &[t]).unwrap(), sd().log_value(d.view(), &[t]).unwrap());
        }
        let g = Grid::line(-4.0, 4.0, 4001).unwrap();
        let q = make_prior(PriorKind::GaussianSurprise { k: 0.1 }, &g).unwrap();
        let rho = regularizer_from_contour(&q, &beta_mixture_calibrator(1.0).unwrap()).unwrap();
        let reg = regularize(sd(), rho.clone()).unwrap();
        let want = rho.log_value(&[0.7]) + sd().log_value(d.view(), &[0.7]).unwrap();
        assert_abs_diff_eq!(reg.log_value(d.view(), &[0.7]).unwrap(), want, epsilon = 1e-12);
        // q underflows to 0 far out, so ρ = +∞ there.
        assert_eq!(reg.log_value(d.view(), &[20.0]).unwrap(), f64::INFINITY);
        let ware = make_prior(PriorKind::WareJoint, &Grid::unit_square(101).unwrap()).unwrap();
        let rho2 = regularizer_from_contour(&ware, &beta_mixture_calibrator(1.0).unwrap()).unwrap();
        assert!(matches!(regularize(sd(), rho2), Err(Error::DomainMismatch { .. })));
    }

    #[test]
    fn log_values_on_grid_match_pointwise() {
        let g = Grid::line(-2.0, 2.0, 41).unwrap();
        let q = make_prior(PriorKind::MeanBound { k: 0.4 }, &g).unwrap();
        let rho = regularizer_from_contour(&q, &beta_mixture_calibrator(2.0).unwrap()).unwrap();
        let reg = regularize(sd(), rho).unwrap();
        let d = Dataset::Real(vec![0.3, -0.1, 1.2]);
        let all = reg.log_values_on(d.view(), &g).unwrap();
        let again = reg.log_values_on(d.view(), &g).unwrap();
        assert_eq!(all, again);
        for (i, v) in all.iter().enumerate() {
            assert_eq!(*v, reg.log_value(d.view(), &g.point_vec(i)).unwrap());
        }
    }

    #[test]
    fn stop_index_examples() {
        let path = [0.5, 1.2, 25.0];
        assert_eq!(stop_index(StoppingRule::Threshold { c: 20.0, horizon: 10 }, &path).unwrap(), 3);
        assert_eq!(stop_index(StoppingRule::Fixed { n: 2 }, &path).unwrap(), 2);
        assert_eq!(stop_index(StoppingRule::Threshold { c: 100.0, horizon: 3 }, &path).unwrap(), 3);
        assert_eq!(stop_index(StoppingRule::Horizon { n: 10 }, &path).unwrap(), 3);
        assert!(stop_index(StoppingRule::Fixed { n: 4 }, &path).is_err());
        assert!(stop_index(StoppingRule::Threshold { c: 0.0, horizon: 3 }, &path).is_err());
        assert_eq!(stop_index(StoppingRule::Fixed { n: 0 }, &[]).unwrap(), 0);
    }

    #[test]
    fn gaussian_region_hull() {
        let g = Grid::line(-4.0, 4.0, 8001).unwrap();
        let reg = regularize(sd(), vacuous()).unwrap();
        let r = confidence_region(&reg, five(0.5).view(), 0.05, &g).unwrap();
        let half = ((2.0 / 5.0) * (20f64.ln() + 0.5 * 51f64.ln() + 0.5 * (5.0 / 51.0) * 0.25)).sqrt();
        let (lo, hi) = r.hull.unwrap();
        assert_abs_diff_eq!(lo, 0.5 - half, epsilon = 1e-3);
        assert_abs_diff_eq!(hi, 0.5 + half, epsilon = 1e-3);
        assert_abs_diff_eq!(lo, -0.9105, epsilon = 1e-3);
    }

    #[test]
    fn region_at_alpha_one_is_threshold_scan() {
        let g = Grid::line(-4.0, 4.0, 801).unwrap();
        let reg = regularize(sd(), vacuous()).unwrap();
        let d = five(0.5);
        let r = confidence_region(&reg, d.view(), 1.0, &g).unwrap();
        let scan = GridSet::from_predicate(&g, |t| reg.log_value(d.view(), t).unwrap() <= 0.0);
        assert_eq!(r.set, scan);
        assert!(confidence_region(&reg, d.view(), 0.0, &g).is_err());
    }

    #[test]
    fn empty_region_warns() {
        let g = Grid::line(3.0, 4.0, 11).unwrap();
        let reg = regularize(sd(), vacuous()).unwrap();
        let r = confidence_region(&reg, Dataset::Real(vec![0.0; 50]).view(), 0.05, &g).unwrap();
        assert!(r.set.is_empty());
        assert!(r.warning.is_some());
        assert!(r.hull.is_none());
    }

    #[test]
    fn path_csv_format() {
        let reg = regularize(sd(), vacuous()).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &reg, DataView::Real(&[0.1, 0.2]), &[vec![0.0], vec![1.0]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,theta,log_e");
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("0,0,0"));
    }

    #[test]
    fn csv_datasets() {
        let d = Dataset::from_csv("1.5\n-2\n\n3e-1\n".as_bytes()).unwrap();
        assert_eq!(d, Dataset::Real(vec![1.5, -2.0, 0.3]));
        let c = Dataset::from_csv("6,4,9,0\n1,0,0,1\n".as_bytes()).unwrap();
        assert_eq!(c.view().totals().unwrap(), ArmCounts::new(7, 4, 9, 1));
        assert!(matches!(Dataset::from_csv("1\n1,2\n".as_bytes()), Err(Error::Data(_))));
        assert!(matches!(Dataset::from_csv("1\n1,2,3,4\n".as_bytes()), Err(Error::Data(_))));
        assert!(matches!(Dataset::from_csv("".as_bytes()), Err(Error::Data(_))));
        assert!(parse_line("nan").is_err());
        assert!(parse_line("1,2,-3,4").is_err());
    }

    #[test]
    fn prefix_is_stable_under_append() {
        let mut d = Dataset::Real(vec![1.0, 2.0]);
        let before = d.prefix(2).unwrap().len();
        d.push_real(3.0).unwrap();
        assert_eq!(before, 2);
        assert!(matches!(d.prefix(2).unwrap(), DataView::Real(z) if z == [1.0, 2.0]));
        assert!(d.prefix(4).is_err());
        assert!(d.push_counts(ArmCounts::ware()).is_err());
        assert!(d.push_real(f64::NAN).is_err());
    }

    #[test]
    fn gaussian_e_values_have_mean_at_most_one() {
        let e = sd();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 10_000;
        let xs: Vec<f64> = (0..reps)
            .map(|_| {
                let z: Vec<f64> = (0..10).map(|_| 0.3 + rng.sample::<f64, _>(StandardNormal)).collect();
                e.log_value(DataView::Real(&z), &[0.3]).unwrap().exp()
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / reps as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(mean <= 1.0 + 3.0 * sd / (reps as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn median_e_values_have_mean_at_most_one() {
        // Laplace data: the quasi-likelihood exp(−|z−θ|) is a density, so η ≤ 1 keeps E e ≤ 1.
        let e = median_quasi_eprocess(0.2, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reps = 10_000;
        let xs: Vec<f64> = (0..reps)
            .map(|_| {
                let z: Vec<f64> = (0..15)
                    .map(|_| {
                        let u: f64 = rng.random::<f64>() - 0.5;
                        -u.signum() * (1.0 - 2.0 * u.abs()).ln()
                    })
                    .collect();
                e.log_value(DataView::Real(&z), &[0.0]).unwrap().exp()
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / reps as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(mean <= 1.0 + 3.0 * sd / (reps as f64).sqrt(), "mean {mean}");
    }

    proptest! {
        #[test]
        fn savage_dickey_quadrature_agreement(
            n in 1usize..=50, zbar in -3.0f64..3.0, theta in -3.0f64..3.0, wide in any::<bool>()
        ) {
            let v = if wide { 10.0 } else { 1.0 };
            let data = vec![zbar; n];
            let closed = savage_dickey_gaussian(v).unwrap().log_value(DataView::Real(&data), &[theta]).unwrap();
            let quad = savage_dickey_quadrature_oracle(v, &data, theta, 20_000);
            prop_assert!(((closed - quad).exp() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn median_path_is_running_sum(z in prop::collection::vec(-5.0f64..5.0, 0..40), theta in -3.0f64..3.0) {
            let e = median_quasi_eprocess(0.3, 0.1).unwrap();
            let path = e.log_path(DataView::Real(&z), &[theta]).unwrap();
            prop_assert_eq!(path.len(), z.len() + 1);
            for k in 0..=z.len() {
                let direct = e.log_value(DataView::Real(&z[..k]), &[theta]).unwrap();
                prop_assert!((path[k] - direct).abs() < 1e-9);
            }
        }

        #[test]
        fn test_region_duality(zs in prop::collection::vec(-2.0f64..2.0, 1..20), a in -4.0f64..4.0, w in 0.0f64..3.0, alpha in 0.01f64..1.0) {
            let g = Grid::line(-4.0, 4.0, 401).unwrap();
            let reg = regularize(sd(), vacuous()).unwrap();
            let h = GridSet::from_predicate(&g, |t| t[0] >= a && t[0] <= a + w);
            prop_assume!(!h.is_empty());
            let d = DataView::Real(&zs);
            let test = composite_test(&reg, d, &h, alpha).unwrap();
            let region = confidence_region(&reg, d, alpha, &g).unwrap();
            prop_assert_eq!(test.reject, !h.intersects(&region.set));
        }
    }
}
