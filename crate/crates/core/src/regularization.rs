//! Regularizers ρ ≥ 0 with upper expectation at most 1 under a declared prior model.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calibration::Calibrator;
use crate::error::{invalid, Error, Result};
use crate::possibility::{choquet_upper_expectation, Contour, Grid, PointFn, PriorSampler, DEFAULT_S_NODES};

/// Slack allowed on the unit bound when a regularizer is verified.
pub const BOUND_TOL: f64 = 1e-3;
/// Default Monte Carlo draws for sampler centers.
pub const DEFAULT_CENTER_DRAWS: usize = 100_000;

/// Where a regularizer came from.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Calibrated { contour: String, calibrator: String },
    Vacuous,
    FiniteSupport,
    Checked { label: String },
}

/// θ ↦ ρ(θ) ∈ [0, +∞].
#[derive(Clone)]
pub struct Regularizer {
    provenance: Provenance,
    dim: Option<usize>,
    eval: Arc<PointFn>,
}

impl fmt::Debug for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Regularizer")
            .field("provenance", &self.provenance)
            .field("dim", &self.dim)
            .finish()
    }
}

impl Regularizer {
    pub fn value(&self, theta: &[f64]) -> f64 {
        (self.eval)(theta)
    }

    /// `ln ρ(θ)`, with `+∞` for ρ = +∞ and `−∞` for ρ = 0.
    pub fn log_value(&self, theta: &[f64]) -> f64 {
        self.value(theta).ln()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Parameter dimension, or `None` for a constant regularizer.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn label(&self) -> String {
        match &self.provenance {
            Provenance::Calibrated { contour, .. } => contour.clone(),
            Provenance::Vacuous => "vacuous".into(),
            Provenance::FiniteSupport => "finite_support".into(),
            Provenance::Checked { label } => label.clone(),
        }
    }

    /// A user-supplied ρ, accepted only if its upper expectation under `model` is ≤ 1 + 1e−3.
    pub fn checked<F>(label: &str, dim: usize, model: &PriorModel, rho: F) -> Result<Regularizer>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let r = Regularizer {
            provenance: Provenance::Checked { label: label.into() },
            dim: Some(dim),
            eval: Arc::new(rho),
        };
        let ub = upper_expectation_under(model, &r)?;
        if !(ub <= 1.0 + BOUND_TOL) {
            return Err(Error::RegularizerBound { value: ub, limit: 1.0 + BOUND_TOL });
        }
        Ok(r)
    }
}

/// ρ = 1/γ(q(θ)); verifies the Choquet upper expectation of ρ under q.
pub fn regularizer_from_contour(q: &Contour, gamma: &Calibrator) -> Result<Regularizer> {
    if !q.is_normalized() {
        return Err(Error::NotNormalized { sup: q.sup() });
    }
    let eval = q.evaluator();
    let cal = gamma.clone();
    let rho = Regularizer {
        provenance: Provenance::Calibrated { contour: q.label().into(), calibrator: gamma.label() },
        dim: Some(q.grid().dim()),
        eval: Arc::new(move |t: &[f64]| cal.reciprocal(eval(t))),
    };
    let values: Vec<f64> = q.values().iter().map(|u| gamma.reciprocal(*u)).collect();
    let ub = choquet_upper_expectation(q, &values, DEFAULT_S_NODES)?.value;
    if !(ub <= 1.0 + BOUND_TOL) {
        return Err(Error::RegularizerBound { value: ub, limit: 1.0 + BOUND_TOL });
    }
    Ok(rho)
}

/// ρ ≡ 1.
pub fn vacuous() -> Regularizer {
    Regularizer { provenance: Provenance::Vacuous, dim: None, eval: Arc::new(|_| 1.0) }
}

/// A precise center distribution for contamination and constant-odds models.
#[derive(Clone, Debug, PartialEq)]
pub enum Center {
    Atoms { points: Vec<Vec<f64>>, weights: Vec<f64> },
    Sampler { sampler: PriorSampler, draws: usize, seed: u64 },
}

impl Center {
    fn mean_of<F: Fn(&[f64]) -> f64>(&self, f: F) -> Result<f64> {
        match self {
            Center::Atoms { points, weights } => {
                if points.len() != weights.len() || points.is_empty() {
                    return Err(invalid("atom points and weights must have equal, nonzero length"));
                }
                let total: f64 = weights.iter().sum();
                if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(invalid("atom weights must be a probability vector"));
                }
                Ok(points.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(p, w)| w * f(p)).sum())
            }
            Center::Sampler { sampler, draws, seed } => {
                sampler.validate()?;
                if *draws == 0 {
                    return Err(invalid("center draws must be positive"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut buf = Vec::new();
                let mut sum = 0.0;
                for _ in 0..*draws {
                    buf.clear();
                    sampler.draw_into(&mut rng, &mut buf);
                    sum += f(&buf);
                }
                Ok(sum / *draws as f64)
            }
        }
    }
}

/// Models of prior uncertainty against which a regularizer is checked.
#[derive(Clone, Debug)]
pub enum PriorModel {
    Possibilistic(Contour),
    /// `(1−ε)·Q_center + ε·(anything)`; `support` is the grid over which sup ρ is taken.
    Contamination { center: Center, epsilon: f64, support: Grid },
    /// Constant odds-ratio neighbourhood of the center.
    ConstantOdds { center: Center, tau: f64, support: Grid },
    /// Finitely many atoms with the upper probability of each singleton.
    Finite { atoms: Vec<Vec<f64>>, upper_masses: Vec<f64> },
}

fn open_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in (0,1), got {x}")))
    }
}

fn grid_sup(support: &Grid, rho: &Regularizer) -> f64 {
    support.map(&|t: &[f64]| rho.value(t)).into_iter().fold(0.0, f64::max)
}

/// Upper expectation of ρ under the model.
pub fn upper_expectation_under(model: &PriorModel, rho: &Regularizer) -> Result<f64> {
    match model {
        PriorModel::Possibilistic(q) => {
            let values = q.grid().map(&|t: &[f64]| rho.value(t));
            Ok(choquet_upper_expectation(q, &values, DEFAULT_S_NODES)?.value)
        }
        PriorModel::Contamination { center, epsilon, support } => {
            open_unit("epsilon", *epsilon)?;
            let sup = grid_sup(support, rho);
            if sup.is_infinite() {
                return Ok(f64::INFINITY);
            }
            let mean = center.mean_of(|t| rho.value(t))?;
            Ok((1.0 - epsilon) * mean + epsilon * sup)
        }
        PriorModel::ConstantOdds { center, tau, support } => {
            open_unit("tau", *tau)?;
            let sup = grid_sup(support, rho);
            if sup.is_infinite() {
                return Ok(f64::INFINITY);
            }
            let mean = center.mean_of(|t| rho.value(t))?;
            let f = |x: f64| -> Result<f64> {
                let excess = center.mean_of(|t| (rho.value(t) - x).max(0.0))?;
                Ok(tau * excess + (1.0 - tau) * (mean - x))
            };
            bisect(f, 0.0, sup, 1e-8)
        }
        PriorModel::Finite { atoms, upper_masses } => {
            if atoms.len() != upper_masses.len() {
                return Err(invalid("atoms and upper masses differ in length"));
            }
            if upper_masses.iter().any(|m| !(0.0..=1.0).contains(m)) {
                return Err(invalid("upper masses must lie in [0,1]"));
            }
            Ok(atoms.iter().zip(upper_masses).map(|(a, m)| if *m > 0.0 { rho.value(a) * m } else { 0.0 }).sum())
        }
    }
}

fn bisect<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::BracketFailure { lo, hi, f_lo, f_hi });
    }
    let rising = f_lo < 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// ρ(θ) = η(θ)/upper_mass(θ) on the atoms, 0 elsewhere.
pub fn finite_support_regularizer(atoms: Vec<Vec<f64>>, eta: Vec<f64>, upper_masses: Vec<f64>) -> Result<Regularizer> {
    if atoms.len() != eta.len() || atoms.len() != upper_masses.len() || atoms.is_empty() {
        return Err(invalid("atoms, eta and upper masses must have equal, nonzero length"));
    }
    let dim = atoms[0].len();
    if atoms.iter().any(|a| a.len() != dim) {
        return Err(invalid("atoms must share one dimension"));
    }
    if eta.iter().any(|e| *e < 0.0) || eta.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(invalid("eta must be a sub-probability mass function"));
    }
    let mut values = Vec::with_capacity(atoms.len());
    for (e, m) in eta.iter().zip(&upper_masses) {
        if *e > 0.0 && *m <= 0.0 {
            return Err(invalid("upper mass must be positive where eta is positive"));
        }
        values.push(if *e > 0.0 { e / m } else { 0.0 });
    }
    let table: Vec<(Vec<f64>, f64)> = atoms.into_iter().zip(values).collect();
    Ok(Regularizer {
        provenance: Provenance::FiniteSupport,
        dim: Some(dim),
        eval: Arc::new(move |t: &[f64]| table.iter().find(|(a, _)| a.as_slice() == t).map_or(0.0, |(_, v)| *v)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{beta_mixture_calibrator, trivial_calibrator};
    use crate::possibility::{make_prior, PriorKind};
    use approx::assert_abs_diff_eq;

    fn line() -> Grid {
        Grid::line(-4.0, 4.0, 4001).unwrap()
    }

    fn kinds() -> Vec<PriorKind> {
        vec![
            PriorKind::GaussianSurprise { k: 0.1 },
            PriorKind::GaussianSurprise { k: 0.8 },
            PriorKind::MeanBound { k: 0.4 },
            PriorKind::EventBound { k: 0.2 },
            PriorKind::MedianPrior,
        ]
    }

    #[test]
    fn vacuous_contour_gives_half() {
        let g = line();
        let q = make_prior(PriorKind::Vacuous, &g).unwrap();
        let rho = regularizer_from_contour(&q, &beta_mixture_calibrator(1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(rho.value(&[0.3]), 0.5, epsilon = 1e-12);
        let gs = make_prior(PriorKind::GaussianSurprise { k: 0.1 }, &g).unwrap();
        let rho = regularizer_from_contour(&gs, &beta_mixture_calibrator(1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(rho.value(&[0.0]), 0.5, epsilon = 1e-12);
        assert_eq!(rho.value(&[30.0]), f64::INFINITY);
    }

    #[test]
    fn rho_at_point_seven_decreases_in_k() {
        let g = line();
        let cal = beta_mixture_calibrator(1.0).unwrap();
        let vals: Vec<f64> = [0.1, 0.2, 0.4, 0.8]
            .iter()
            .map(|k| {
                let q = make_prior(PriorKind::GaussianSurprise { k: *k }, &g).unwrap();
                regularizer_from_contour(&q, &cal).unwrap().value(&[0.7])
            })
            .collect();
        let want = [2.493, 1.171, 0.815, 0.674];
        for (v, w) in vals.iter().zip(want) {
            assert_abs_diff_eq!(*v, w, epsilon = 2e-3);
        }
        assert!(vals.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn vacuous_regularizer() {
        let v = vacuous();
        assert_eq!(v.value(&[123.0]), 1.0);
        assert_eq!(v.log_value(&[0.0, 1.0]), 0.0);
        assert_eq!(v.dim(), None);
        let q = make_prior(PriorKind::MedianPrior, &line()).unwrap();
        assert_abs_diff_eq!(upper_expectation_under(&PriorModel::Possibilistic(q), &v).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn calibrated_bound_across_priors_and_kappas() {
        let g = line();
        for kind in kinds() {
            let q = make_prior(kind, &g).unwrap();
            for kappa in [0.5, 1.0, 2.0] {
                let rho = regularizer_from_contour(&q, &beta_mixture_calibrator(kappa).unwrap()).unwrap();
                let ub = upper_expectation_under(&PriorModel::Possibilistic(q.clone()), &rho).unwrap();
                assert!(ub <= 1.0 + BOUND_TOL, "{} κ={kappa}: {ub}", kind.label());
                let max = g.map(&|t: &[f64]| rho.value(t)).into_iter().fold(0.0, f64::max);
                assert!(max > 1.0, "{} κ={kappa} is dominated", kind.label());
            }
        }
        let sq = Grid::unit_square(101).unwrap();
        let w = make_prior(PriorKind::WareJoint, &sq).unwrap();
        let rho = regularizer_from_contour(&w, &beta_mixture_calibrator(1.0).unwrap()).unwrap();
        assert!(upper_expectation_under(&PriorModel::Possibilistic(w), &rho).unwrap() <= 1.0 + BOUND_TOL);
    }

    #[test]
    fn rho_non_increasing_in_q() {
        let g = line();
        let cal = beta_mixture_calibrator(1.0).unwrap();
        for kind in kinds() {
            let q = make_prior(kind, &g).unwrap();
            let rho = regularizer_from_contour(&q, &cal).unwrap();
            let mut pairs: Vec<(f64, f64)> = (0..g.len()).step_by(7).map(|i| (q.values()[i], rho.value(&g.point_vec(i)))).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                if w[0].0 < w[1].0 {
                    assert!(w[0].1 >= w[1].1);
                }
            }
        }
    }

    #[test]
    fn trivial_calibrator_is_vacuous_like() {
        let q = make_prior(PriorKind::MeanBound { k: 0.4 }, &line()).unwrap();
        let rho = regularizer_from_contour(&q, &trivial_calibrator()).unwrap();
        assert_eq!(rho.value(&[3.0]), 1.0);
    }

    #[test]
    fn unnormalized_contour_is_rejected() {
        let q = Contour::new_unnormalized("low", &line(), |_: &[f64]| 0.5).unwrap();
        assert!(matches!(
            regularizer_from_contour(&q, &beta_mixture_calibrator(1.0).unwrap()),
            Err(Error::NotNormalized { .. })
        ));
    }

    // An unchecked ρ, for probing the model arithmetic.
    fn raw(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Regularizer {
        Regularizer { provenance: Provenance::Checked { label: "raw".into() }, dim: Some(1), eval: Arc::new(f) }
    }

    fn atoms() -> Center {
        Center::Atoms { points: vec![vec![0.0], vec![1.0], vec![2.0]], weights: vec![0.2, 0.5, 0.3] }
    }

    #[test]
    fn contamination_examples() {
        let support = Grid::line(0.0, 2.0, 3).unwrap();
        let model = PriorModel::Contamination { center: atoms(), epsilon: 0.5, support: support.clone() };
        assert_abs_diff_eq!(upper_expectation_under(&model, &vacuous()).unwrap(), 1.0, epsilon = 1e-12);
        let bad = PriorModel::Contamination { center: atoms(), epsilon: 1.0, support };
        assert!(upper_expectation_under(&bad, &vacuous()).is_err());
    }

    #[test]
    fn constant_odds_limits() {
        let support = Grid::line(0.0, 2.0, 3).unwrap();
        let model = PriorModel::ConstantOdds { center: atoms(), tau: 0.5, support: support.clone() };
        let rho = raw(|t: &[f64]| t[0]);
        let mean = 0.5 + 0.6;
        let tiny = PriorModel::ConstantOdds { center: atoms(), tau: 1e-9, support };
        assert_abs_diff_eq!(upper_expectation_under(&tiny, &rho).unwrap(), mean, epsilon = 1e-6);
        let mid = upper_expectation_under(&model, &rho).unwrap();
        assert!(mid > mean && mid <= 2.0);
    }

    #[test]
    fn constant_odds_flat_rho_hits_bracket_edge() {
        let support = Grid::line(0.0, 2.0, 3).unwrap();
        let model = PriorModel::ConstantOdds { center: atoms(), tau: 0.3, support };
        assert_abs_diff_eq!(upper_expectation_under(&model, &vacuous()).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn bisect_reports_bracket_failure() {
        let e = bisect(|x| Ok(x + 1.0), 0.0, 1.0, 1e-8).unwrap_err();
        assert!(matches!(e, Error::BracketFailure { .. }));
    }

    #[test]
    fn finite_support_examples() {
        let atoms = vec![vec![0.0], vec![1.0]];
        let single = finite_support_regularizer(atoms.clone(), vec![0.4, 0.6], vec![0.4, 0.6]).unwrap();
        assert_abs_diff_eq!(single.value(&[0.0]), 1.0);
        assert_abs_diff_eq!(single.value(&[1.0]), 1.0);
        assert_eq!(single.value(&[0.5]), 0.0);
        let vac = finite_support_regularizer(atoms.clone(), vec![0.3, 0.5], vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(vac.value(&[1.0]), 0.5);
        let two = finite_support_regularizer(atoms.clone(), vec![0.5, 0.5], vec![0.5, 1.0]).unwrap();
        assert_abs_diff_eq!(two.value(&[0.0]), 1.0);
        assert_abs_diff_eq!(two.value(&[1.0]), 0.5);
        let model = PriorModel::Finite { atoms: atoms.clone(), upper_masses: vec![0.5, 1.0] };
        assert_abs_diff_eq!(upper_expectation_under(&model, &two).unwrap(), 1.0, epsilon = 1e-12);
        assert!(finite_support_regularizer(atoms.clone(), vec![0.5, 0.5], vec![0.0, 1.0]).is_err());
        assert!(finite_support_regularizer(atoms, vec![0.7, 0.5], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn checked_rejects_excess() {
        let model = PriorModel::Finite { atoms: vec![vec![0.0]], upper_masses: vec![1.0] };
        assert!(Regularizer::checked("two", 1, &model, |_: &[f64]| 2.0).is_err());
        assert!(Regularizer::checked("one", 1, &model, |_: &[f64]| 1.0).is_ok());
    }

    #[test]
    fn sampler_center_is_seeded() {
        let support = Grid::line(-4.0, 4.0, 81).unwrap();
        let center = Center::Sampler { sampler: PriorSampler::Normal { mean: 0.0, var: 1.0 }, draws: 20_000, seed: 5 };
        let model = PriorModel::Contamination { center, epsilon: 0.1, support };
        let rho = raw(|t: &[f64]| t[0].abs());
        let a = upper_expectation_under(&model, &rho).unwrap();
        let b = upper_expectation_under(&model, &rho).unwrap();
        assert_eq!(a, b);
        // 0.9·E|Z| + 0.1·4
        assert_abs_diff_eq!(a, 0.9 * (2.0 / std::f64::consts::PI).sqrt() + 0.4, epsilon = 0.02);
    }
}
