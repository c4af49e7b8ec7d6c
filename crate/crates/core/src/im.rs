//! The regularized e-possibilistic IM: contour, upper/lower probabilities,
//! marginal utility intervals and Choquet decision rules.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::eprocess::{DataView, PreparedReg, RegularizedEProcess};
use crate::possibility::{extension_marginal, Axis, Contour, Grid, GridSet, LevelSets, Marginal, DEFAULT_S_NODES};

/// π(θ) = 1 ∧ 1/𝔢^reg(z^n, θ) for a fixed data prefix.
#[derive(Clone)]
pub struct IMContour {
    contour: Contour,
    log_ereg: Arc<Vec<f64>>,
    prepared: Arc<PreparedReg>,
    levels: Arc<LevelSets>,
}

impl fmt::Debug for IMContour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IMContour").field("contour", &self.contour).finish()
    }
}

fn pi_of_log(l: f64) -> f64 {
    if l <= 0.0 {
        1.0
    } else {
        (-l).exp()
    }
}

/// Builds the IM contour on `grid`. Sub-normalized contours are allowed and flagged.
pub fn im_contour(ereg: &RegularizedEProcess, data: DataView<'_>, grid: &Grid) -> Result<IMContour> {
    let logs = ereg.log_values_on(data, grid)?;
    let prepared = Arc::new(ereg.prepare(data)?);
    let values: Vec<f64> = logs.iter().map(|l| pi_of_log(*l)).collect();
    let p = prepared.clone();
    let contour = Contour::from_parts(
        format!("im[{}]", ereg.label()),
        grid,
        values,
        Arc::new(move |t: &[f64]| pi_of_log(p.log_value(t))),
    )?;
    let levels = Arc::new(LevelSets::of(&contour));
    Ok(IMContour { contour, log_ereg: Arc::new(logs), prepared, levels })
}

impl IMContour {
    pub fn contour(&self) -> &Contour {
        &self.contour
    }

    pub fn grid(&self) -> &Grid {
        self.contour.grid()
    }

    pub fn pi(&self, theta: &[f64]) -> f64 {
        pi_of_log(self.prepared.log_value(theta))
    }

    pub fn log_ereg(&self, theta: &[f64]) -> f64 {
        self.prepared.log_value(theta)
    }

    /// ln 𝔢^reg on the grid nodes.
    pub fn log_ereg_values(&self) -> &[f64] {
        &self.log_ereg
    }

    pub fn values(&self) -> &[f64] {
        self.contour.values()
    }

    /// Whether the grid supremum reaches 1 within 1e−9.
    pub fn is_normalized(&self) -> bool {
        self.contour.is_normalized()
    }

    pub fn level_sets(&self) -> &LevelSets {
        &self.levels
    }
}

/// (lower, upper) IM probabilities of a hypothesis.
pub fn im_upper_lower(contour: &IMContour, hypothesis: &GridSet) -> Result<(f64, f64)> {
    if hypothesis.grid() != contour.grid() {
        return Err(invalid("hypothesis grid differs from the contour grid"));
    }
    if hypothesis.is_empty() {
        return Err(Error::EmptyHypothesis);
    }
    let v = contour.values();
    let upper = hypothesis.indices().map(|i| v[i]).fold(0.0, f64::max);
    let comp = hypothesis.complement();
    let lower = if comp.is_empty() { 1.0 } else { 1.0 - comp.indices().map(|i| v[i]).fold(0.0, f64::max) };
    Ok((lower, upper))
}

type LossFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// ℓ_a(θ) ≥ 0 over a finite action grid.
#[derive(Clone)]
pub struct LossFunction {
    label: String,
    actions: Vec<f64>,
    eval: Arc<LossFn>,
}

impl fmt::Debug for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossFunction").field("label", &self.label).field("actions", &self.actions.len()).finish()
    }
}

impl LossFunction {
    pub fn new<F>(label: impl Into<String>, actions: Vec<f64>, loss: F) -> Result<LossFunction>
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        if actions.is_empty() {
            return Err(invalid("action grid is empty"));
        }
        if actions.iter().any(|a| !a.is_finite()) {
            return Err(invalid("actions must be finite"));
        }
        Ok(LossFunction { label: label.into(), actions, eval: Arc::new(loss) })
    }

    /// (a − θ)².
    pub fn squared_error(actions: Vec<f64>) -> Result<LossFunction> {
        LossFunction::new("squared_error", actions, |a, t| (a - t[0]).powi(2))
    }

    /// |a − θ|.
    pub fn absolute_error(actions: Vec<f64>) -> Result<LossFunction> {
        LossFunction::new("absolute_error", actions, |a, t| (a - t[0]).abs())
    }

    /// ℓ ≡ c.
    pub fn constant(actions: Vec<f64>, c: f64) -> Result<LossFunction> {
        if !(c >= 0.0) {
            return Err(invalid("constant loss must be non-negative"));
        }
        LossFunction::new("constant", actions, move |_, _| c)
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, a: f64, theta: &[f64]) -> f64 {
        (self.eval)(a, theta)
    }

    fn on_grid(&self, a: f64, grid: &Grid) -> Result<Vec<f64>> {
        let v = grid.map(&|t: &[f64]| self.eval(a, t));
        if v.iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(invalid(format!("loss at action {a} is negative or NaN on the grid")));
        }
        Ok(v)
    }
}

/// Choquet upper expected loss of action `a`.
pub fn upper_expected_loss(contour: &IMContour, loss: &LossFunction, a: f64) -> Result<f64> {
    let g = loss.on_grid(a, contour.grid())?;
    Ok(contour.level_sets().upper(&g, DEFAULT_S_NODES)?.value)
}

/// Choquet lower expected loss of action `a`.
pub fn lower_expected_loss(contour: &IMContour, loss: &LossFunction, a: f64) -> Result<f64> {
    let g = loss.on_grid(a, contour.grid())?;
    Ok(contour.level_sets().lower(&g, DEFAULT_S_NODES)?.value)
}

/// One point of a risk curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskPoint {
    pub action: f64,
    pub upper: f64,
    pub lower: f64,
}

/// The decision report `{action, upper_risk, lower_risk, risk_curve}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecisionReport {
    pub action: f64,
    pub upper_risk: f64,
    pub lower_risk: f64,
    pub risk_curve: Vec<RiskPoint>,
}

/// Upper and lower risks over the action grid, sorted by action.
pub fn risk_curve(contour: &IMContour, loss: &LossFunction) -> Result<Vec<RiskPoint>> {
    let mut actions = loss.actions().to_vec();
    actions.sort_by(f64::total_cmp);
    actions
        .into_iter()
        .map(|a| {
            let g = loss.on_grid(a, contour.grid())?;
            let ls = contour.level_sets();
            let upper = ls.upper(&g, DEFAULT_S_NODES)?.value;
            let lower = if upper.is_finite() { ls.lower(&g, DEFAULT_S_NODES)?.value } else { f64::NAN };
            Ok(RiskPoint { action: a, upper, lower })
        })
        .collect()
}

/// Minimizer of the upper expected loss; ties go to the smallest action.
pub fn optimal_action(contour: &IMContour, loss: &LossFunction) -> Result<DecisionReport> {
    let curve = risk_curve(contour, loss)?;
    let mut best: Option<RiskPoint> = None;
    for p in &curve {
        if p.upper.is_finite() && best.is_none_or(|b| p.upper < b.upper) {
            best = Some(*p);
        }
    }
    let best = best.ok_or_else(|| invalid("every action has infinite upper risk"))?;
    Ok(DecisionReport { action: best.action, upper_risk: best.upper, lower_risk: best.lower, risk_curve: curve })
}

/// A lower/upper expectation pair with the marginal contour behind it.
#[derive(Clone, Debug)]
pub struct MarginalInterval {
    pub lower: f64,
    pub upper: f64,
    pub marginal: Marginal,
}

/// Lower and upper possibilistic expectations of a scalar feature through its
/// extension-principle marginal on `delta_axis`.
pub fn marginal_expectation_interval<F>(contour2d: &Contour, feature: F, delta_axis: &Axis) -> Result<MarginalInterval>
where
    F: Fn(&[f64]) -> f64,
{
    if !contour2d.is_normalized() {
        return Err(Error::NotNormalized { sup: contour2d.sup() });
    }
    let marginal = extension_marginal(contour2d, feature, delta_axis)?;
    let levels = LevelSets::of(&marginal.contour);
    let delta: Vec<f64> = delta_axis.iter().collect();
    let upper = levels.upper(&delta, DEFAULT_S_NODES)?.value;
    let neg: Vec<f64> = delta.iter().map(|d| -d).collect();
    let lower = -levels.upper(&neg, DEFAULT_S_NODES)?.value;
    Ok(MarginalInterval { lower, upper, marginal })
}

/// Pointwise decision certificate at one θ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecisionCertificate {
    /// max over actions of ℓ_a(θ) / Π̄(ℓ_a).
    pub max_ratio: f64,
    pub e_reg: f64,
    /// max_ratio ≤ 𝔢^reg·(1+1e−9).
    pub holds: bool,
    /// max_ratio ≤ max(1, 𝔢^reg)·(1+1e−9), i.e. ratio ≤ 1/π(θ).
    pub holds_capped: bool,
}

/// Checks `ℓ_a(θ)/Π̄(ℓ_a) ≤ 𝔢^reg(z^n, θ)` over the action grid.
pub fn decision_bound_check(contour: &IMContour, loss: &LossFunction, theta: &[f64]) -> Result<DecisionCertificate> {
    let max_ratio = max_loss_ratio(contour, loss, theta)?;
    let e_reg = contour.log_ereg(theta).exp();
    let tol = 1.0 + 1e-9;
    Ok(DecisionCertificate {
        max_ratio,
        e_reg,
        holds: max_ratio <= e_reg * tol,
        holds_capped: max_ratio <= e_reg.max(1.0) * tol,
    })
}

/// `max_a ℓ_a(θ)/Π̄(ℓ_a)`, with 0/0 read as 0.
pub fn max_loss_ratio(contour: &IMContour, loss: &LossFunction, theta: &[f64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for &a in loss.actions() {
        let num = loss.eval(a, theta);
        if num == 0.0 {
            continue;
        }
        let den = upper_expected_loss(contour, loss, a)?;
        if !den.is_finite() {
            continue;
        }
        let r = if den > 0.0 { num / den } else { f64::INFINITY };
        worst = worst.max(r);
    }
    Ok(worst)
}
