//! Admissible calibrators γ: [0,1] → (0,∞], non-decreasing with ∫₀¹ 1/γ = 1.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::special::{ln_gamma, ln_lower_gamma_scaled};

/// Residual tolerance for the constructor gate.
pub const ADMISSIBILITY_TOL: f64 = 1e-4;
/// Nodes of the monotonicity scan.
pub const SCAN_NODES: usize = 1001;
/// Default quadrature nodes for the admissibility gate.
pub const DEFAULT_QUAD_NODES: usize = 10_000;
/// γ below this is treated as zero, so 1/γ becomes +∞.
pub const GAMMA_FLOOR: f64 = 1e-300;

// Integration window in x for the substitution u = exp(-exp(x)).
const X_LO: f64 = -40.0;
const X_HI: f64 = 50.0;

type DensityFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Parameter record of a calibrator.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibratorSpec {
    BetaMixture { kappa: f64 },
    ReciprocalDensity { label: String },
}

#[derive(Clone)]
enum Kind {
    BetaMixture { kappa: f64 },
    Reciprocal(Arc<DensityFn>),
}

/// A non-decreasing calibrator with unit reciprocal integral.
#[derive(Clone)]
pub struct Calibrator {
    spec: CalibratorSpec,
    kind: Kind,
}

impl fmt::Debug for Calibrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Calibrator").field("spec", &self.spec).finish()
    }
}

impl Calibrator {
    pub fn spec(&self) -> &CalibratorSpec {
        &self.spec
    }

    pub fn label(&self) -> String {
        match &self.spec {
            CalibratorSpec::BetaMixture { kappa } => format!("beta_mixture(kappa={kappa})"),
            CalibratorSpec::ReciprocalDensity { label } => format!("reciprocal({label})"),
        }
    }

    /// γ(u) for u ∈ [0,1].
    pub fn gamma(&self, u: f64) -> f64 {
        match &self.kind {
            Kind::BetaMixture { kappa } => beta_mixture_gamma(*kappa, u),
            Kind::Reciprocal(density) => 1.0 / density(u),
        }
    }

    /// 1/γ(u), returning `+∞` when γ(u) falls below [`GAMMA_FLOOR`].
    pub fn reciprocal(&self, u: f64) -> f64 {
        let g = self.gamma(u);
        if g < GAMMA_FLOOR {
            f64::INFINITY
        } else {
            1.0 / g
        }
    }

    /// u/γ(u) at u = e^{-z}, defined for every z ≥ 0 even when e^{-z} underflows.
    fn u_over_gamma_neglog(&self, z: f64) -> f64 {
        match &self.kind {
            Kind::BetaMixture { kappa } => {
                kappa * ln_lower_gamma_scaled(1.0 + kappa, z).exp()
            }
            Kind::Reciprocal(density) => {
                let u = (-z).exp();
                if u == 0.0 {
                    return 0.0;
                }
                let d = density(u);
                if d.is_finite() {
                    u * d
                } else {
                    0.0
                }
            }
        }
    }

    /// Analytic mass of ∫ 1/γ below u = exp(-exp(X_HI)).
    fn tail_mass(&self) -> f64 {
        match &self.kind {
            Kind::BetaMixture { kappa } => (ln_gamma(1.0 + kappa) - kappa * X_HI).exp(),
            Kind::Reciprocal(_) => 0.0,
        }
    }
}

fn beta_mixture_gamma(kappa: f64, u: f64) -> f64 {
    if u.is_nan() {
        return f64::NAN;
    }
    if u <= 0.0 {
        return 0.0;
    }
    let u = u.min(1.0);
    let z = -u.ln();
    // γ(u) = u z^a / (κ γ_inc(z, a)), a = 1 + κ, written with the scaled incomplete gamma
    (u.ln() - kappa.ln() - ln_lower_gamma_scaled(1.0 + kappa, z)).exp()
}

/// The beta-mixture calibrator with shape κ.
pub fn beta_mixture_calibrator(kappa: f64) -> Result<Calibrator> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(invalid(format!("kappa must be positive, got {kappa}")));
    }
    let cal = Calibrator {
        spec: CalibratorSpec::BetaMixture { kappa },
        kind: Kind::BetaMixture { kappa },
    };
    gate(&cal)?;
    Ok(cal)
}

/// γ = 1/density for a non-increasing probability density on [0,1].
pub fn reciprocal_density_calibrator<F>(label: &str, density: F) -> Result<Calibrator>
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    for i in 1..SCAN_NODES - 1 {
        let u = i as f64 / (SCAN_NODES - 1) as f64;
        let d = density(u);
        if d.is_nan() || d <= 0.0 {
            return Err(Error::NotAdmissible(format!(
                "density must be positive on (0,1); density({u}) = {d}"
            )));
        }
    }
    let cal = Calibrator {
        spec: CalibratorSpec::ReciprocalDensity { label: label.to_string() },
        kind: Kind::Reciprocal(Arc::new(density)),
    };
    gate(&cal)?;
    Ok(cal)
}

/// The trivial calibrator γ ≡ 1.
pub fn trivial_calibrator() -> Calibrator {
    Calibrator {
        spec: CalibratorSpec::ReciprocalDensity { label: "uniform".into() },
        kind: Kind::Reciprocal(Arc::new(|_| 1.0)),
    }
}

fn gate(cal: &Calibrator) -> Result<()> {
    if let Some(u) = first_decrease(cal) {
        return Err(Error::NotAdmissible(format!("gamma decreases near u = {u}")));
    }
    let r = admissibility_residual(cal, DEFAULT_QUAD_NODES);
    if r.is_nan() || r >= ADMISSIBILITY_TOL {
        return Err(Error::NotAdmissible(format!("|∫1/γ - 1| = {r}")));
    }
    Ok(())
}

/// First scan node where γ drops (beyond rounding), if any.
pub fn first_decrease(cal: &Calibrator) -> Option<f64> {
    let mut prev = cal.gamma(0.0);
    for i in 1..SCAN_NODES {
        let u = i as f64 / (SCAN_NODES - 1) as f64;
        let g = cal.gamma(u);
        if g.is_nan() || g < prev * (1.0 - 1e-12) {
            return Some(u);
        }
        prev = g;
    }
    None
}

/// |∫₀¹ 1/γ(s) ds − 1| by the midpoint rule in x after substituting u = exp(−exp(x)).
///
/// The substitution removes the endpoint singularity of 1/γ at 0; `quad_nodes`
/// below 1001 is raised to 1001.
pub fn admissibility_residual(cal: &Calibrator, quad_nodes: usize) -> f64 {
    let n = quad_nodes.max(1001);
    let h = (X_HI - X_LO) / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let x = X_LO + (i as f64 + 0.5) * h;
        let z = x.exp();
        sum += z * cal.u_over_gamma_neglog(z);
    }
    (sum * h + cal.tail_mass() - 1.0).abs()
}
