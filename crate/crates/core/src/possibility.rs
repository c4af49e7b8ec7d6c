//! Possibility contours, possibilistic upper/lower probabilities and Choquet
//! expectations, credal-set membership, probability-to-possibility transform,
//! extension-principle marginals and a catalogue of prior contours.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::special::chi2_1_sf;

pub const NORMALIZATION_TOL: f64 = 1e-9;
pub const DEFAULT_NODES_1D: usize = 4001;
pub const DEFAULT_NODES_2D: usize = 401;
pub const DEFAULT_S_NODES: usize = 2001;

pub(crate) type PointFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Evenly spaced nodes on `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(invalid(format!("axis bounds must be finite and increasing: [{lower}, {upper}]")));
        }
        if nodes < 2 {
            return Err(invalid("an axis needs at least 2 nodes"));
        }
        Ok(Axis { lower, upper, nodes })
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lower + (self.upper - self.lower) * (i as f64 / (self.nodes - 1) as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nodes).map(move |i| self.node(i))
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = 1e-12 * (self.upper - self.lower);
        x >= self.lower - slack && x <= self.upper + slack
    }

    /// Index of the node nearest to `x`, clamped to the axis.
    pub fn nearest(&self, x: f64) -> usize {
        let t = ((x - self.lower) / self.spacing()).round();
        t.clamp(0.0, (self.nodes - 1) as f64) as usize
    }
}

/// A 1D line or 2D product grid discretizing the parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Grid {
    Line(Axis),
    Plane(Axis, Axis),
}

impl Grid {
    pub fn line(lower: f64, upper: f64, nodes: usize) -> Result<Grid> {
        Ok(Grid::Line(Axis::new(lower, upper, nodes)?))
    }

    pub fn plane(x: Axis, y: Axis) -> Grid {
        Grid::Plane(x, y)
    }

    /// The unit square with `nodes` per axis.
    pub fn unit_square(nodes: usize) -> Result<Grid> {
        let a = Axis::new(0.0, 1.0, nodes)?;
        Ok(Grid::Plane(a, a))
    }

    pub fn dim(&self) -> usize {
        match self {
            Grid::Line(_) => 1,
            Grid::Plane(..) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Grid::Line(a) => a.nodes,
            Grid::Plane(a, b) => a.nodes * b.nodes,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node `i`; 2D nodes are ordered with the first coordinate outermost.
    /// The second slot is 0 for a line.
    pub fn point(&self, i: usize) -> [f64; 2] {
        match self {
            Grid::Line(a) => [a.node(i), 0.0],
            Grid::Plane(a, b) => [a.node(i / b.nodes), b.node(i % b.nodes)],
        }
    }

    pub fn point_vec(&self, i: usize) -> Vec<f64> {
        let p = self.point(i);
        p[..self.dim()].to_vec()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            Grid::Line(a) => theta.len() == 1 && a.contains(theta[0]),
            Grid::Plane(a, b) => theta.len() == 2 && a.contains(theta[0]) && b.contains(theta[1]),
        }
    }

    /// Evaluates `f` at every node.
    pub fn map<F: Fn(&[f64]) -> f64 + ?Sized>(&self, f: &F) -> Vec<f64> {
        let d = self.dim();
        (0..self.len())
            .map(|i| {
                let p = self.point(i);
                f(&p[..d])
            })
            .collect()
    }

    pub fn axis(&self) -> Option<&Axis> {
        match self {
            Grid::Line(a) => Some(a),
            Grid::Plane(..) => None,
        }
    }
}

/// A subset of grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSet {
    grid: Grid,
    mask: Vec<bool>,
}

impl GridSet {
    pub fn from_predicate<F: Fn(&[f64]) -> bool>(grid: &Grid, pred: F) -> GridSet {
        let d = grid.dim();
        let mask = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                pred(&p[..d])
            })
            .collect();
        GridSet { grid: grid.clone(), mask }
    }

    pub fn from_mask(grid: &Grid, mask: Vec<bool>) -> Result<GridSet> {
        if mask.len() != grid.len() {
            return Err(invalid(format!("mask length {} != grid size {}", mask.len(), grid.len())));
        }
        Ok(GridSet { grid: grid.clone(), mask })
    }

    pub fn full(grid: &Grid) -> GridSet {
        GridSet { grid: grid.clone(), mask: vec![true; grid.len()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn complement(&self) -> GridSet {
        GridSet { grid: self.grid.clone(), mask: self.mask.iter().map(|b| !b).collect() }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|b| *b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    pub fn intersects(&self, other: &GridSet) -> bool {
        self.mask.iter().zip(&other.mask).any(|(a, b)| *a && *b)
    }

    pub fn is_subset(&self, other: &GridSet) -> bool {
        self.mask.iter().zip(&other.mask).all(|(a, b)| !*a || *b)
    }

    /// Smallest and largest node of the set on a line grid.
    pub fn hull(&self) -> Option<(f64, f64)> {
        let axis = self.grid.axis()?;
        let first = self.mask.iter().position(|b| *b)?;
        let last = self.mask.iter().rposition(|b| *b)?;
        Some((axis.node(first), axis.node(last)))
    }
}

/// A possibility contour: an evaluator together with its values on a grid.
#[derive(Clone)]
pub struct Contour {
    label: String,
    grid: Grid,
    values: Arc<Vec<f64>>,
    eval: Arc<PointFn>,
    sup: f64,
}

impl fmt::Debug for Contour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Contour")
            .field("label", &self.label)
            .field("grid", &self.grid)
            .field("sup", &self.sup)
            .finish()
    }
}

impl Contour {
    /// A contour whose grid supremum must be 1 within [`NORMALIZATION_TOL`].
    pub fn new<F>(label: impl Into<String>, grid: &Grid, f: F) -> Result<Contour>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let c = Contour::new_unnormalized(label, grid, f)?;
        if !c.is_normalized() {
            return Err(Error::NotNormalized { sup: c.sup });
        }
        Ok(c)
    }

    /// A contour that may be sub-normalized; use [`Contour::is_normalized`] to inspect.
    pub fn new_unnormalized<F>(label: impl Into<String>, grid: &Grid, f: F) -> Result<Contour>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let values = grid.map(&f);
        Contour::assemble(label.into(), grid.clone(), values, Arc::new(f))
    }

    /// A contour known only on the grid; off-grid points are interpolated
    /// linearly (bilinearly in 2D).
    pub fn from_values(label: impl Into<String>, grid: &Grid, values: Vec<f64>) -> Result<Contour> {
        if values.len() != grid.len() {
            return Err(invalid(format!("{} values for a grid of {}", values.len(), grid.len())));
        }
        let table = Arc::new(values.clone());
        let g = grid.clone();
        let eval: Arc<PointFn> = Arc::new(move |t: &[f64]| interpolate(&g, &table, t));
        Contour::assemble(label.into(), grid.clone(), values, eval)
    }

    /// Grid values and evaluator supplied together; the caller guarantees they agree.
    pub(crate) fn from_parts(label: String, grid: &Grid, values: Vec<f64>, eval: Arc<PointFn>) -> Result<Contour> {
        if values.len() != grid.len() {
            return Err(invalid(format!("{} values for a grid of {}", values.len(), grid.len())));
        }
        Contour::assemble(label, grid.clone(), values, eval)
    }

    fn assemble(label: String, grid: Grid, values: Vec<f64>, eval: Arc<PointFn>) -> Result<Contour> {
        let mut sup = 0.0f64;
        for (i, v) in values.iter().enumerate() {
            if !(*v >= 0.0 && *v <= 1.0 + 1e-12) {
                return Err(invalid(format!(
                    "contour value {v} at {:?} outside [0,1]",
                    grid.point_vec(i)
                )));
            }
            sup = sup.max(*v);
        }
        Ok(Contour { label, grid, values: Arc::new(values), eval, sup })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        (self.eval)(theta)
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn is_normalized(&self) -> bool {
        (self.sup - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub(crate) fn evaluator(&self) -> Arc<PointFn> {
        self.eval.clone()
    }

    /// Writes `theta,value` (1D) or `theta1,theta2,value` (2D) rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        match self.grid.dim() {
            1 => out.write_record(["theta", "value"])?,
            _ => out.write_record(["theta1", "theta2", "value"])?,
        }
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.point(i);
            match self.grid.dim() {
                1 => out.write_record(&[p[0].to_string(), v.to_string()])?,
                _ => out.write_record(&[p[0].to_string(), p[1].to_string(), v.to_string()])?,
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn interpolate(grid: &Grid, values: &[f64], t: &[f64]) -> f64 {
    fn locate(a: &Axis, x: f64) -> (usize, f64) {
        let pos = ((x - a.lower) / a.spacing()).clamp(0.0, (a.nodes - 1) as f64);
        let i = (pos.floor() as usize).min(a.nodes - 2);
        (i, pos - i as f64)
    }
    if !grid.contains(t) {
        return 0.0;
    }
    match grid {
        Grid::Line(a) => {
            let (i, w) = locate(a, t[0]);
            values[i] * (1.0 - w) + values[i + 1] * w
        }
        Grid::Plane(a, b) => {
            let (i, wx) = locate(a, t[0]);
            let (j, wy) = locate(b, t[1]);
            let at = |i: usize, j: usize| values[i * b.nodes + j];
            let lo = at(i, j) * (1.0 - wy) + at(i, j + 1) * wy;
            let hi = at(i + 1, j) * (1.0 - wy) + at(i + 1, j + 1) * wy;
            lo * (1.0 - wx) + hi * wx
        }
    }
}

fn check_same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        if a.dim() != b.dim() {
            return Err(Error::DomainMismatch { expected: a.dim(), found: b.dim() });
        }
        return Err(invalid("hypothesis grid differs from the contour grid"));
    }
    Ok(())
}

/// Grid maximum of the contour over `hypothesis`.
pub fn upper_probability(contour: &Contour, hypothesis: &GridSet) -> Result<f64> {
    check_same_grid(contour.grid(), hypothesis.grid())?;
    if hypothesis.is_empty() {
        return Err(Error::EmptyHypothesis);
    }
    Ok(hypothesis.indices().map(|i| contour.values[i]).fold(0.0, f64::max))
}

/// `1 − upper_probability(complement)`, with lower probability 1 when the complement is empty.
pub fn lower_probability(contour: &Contour, hypothesis: &GridSet) -> Result<f64> {
    check_same_grid(contour.grid(), hypothesis.grid())?;
    if hypothesis.is_empty() {
        return Err(Error::EmptyHypothesis);
    }
    let comp = hypothesis.complement();
    if comp.is_empty() {
        return Ok(1.0);
    }
    Ok(1.0 - upper_probability(contour, &comp)?)
}

/// A Choquet expectation; `+∞` when `g` is unbounded on a level set of positive width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Expectation {
    pub value: f64,
}

/// Level sets `{q > s}` of a contour, sorted once and reused across integrands.
#[derive(Clone, Debug)]
pub struct LevelSets {
    order: Vec<usize>,
    levels: Vec<f64>,
    size: usize,
}

impl LevelSets {
    pub fn new(values: &[f64]) -> LevelSets {
        let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let levels = order.iter().map(|&i| values[i]).collect();
        LevelSets { order, levels, size: values.len() }
    }

    pub fn of(contour: &Contour) -> LevelSets {
        LevelSets::new(contour.values())
    }

    /// `∫₀¹ sup{g : q > s} ds` over `s_nodes` panels.
    ///
    /// On a grid the integrand is a step function jumping only at contour levels, so each
    /// panel is integrated exactly and the result does not depend on the panel count.
    /// Functions taking negative values are shifted by `−min g` first.
    pub fn upper(&self, g: &[f64], s_nodes: usize) -> Result<Expectation> {
        if g.len() != self.size {
            return Err(invalid(format!("function has {} values for {} nodes", g.len(), self.size)));
        }
        if s_nodes == 0 {
            return Err(invalid("s_nodes must be positive"));
        }
        let mut min = f64::INFINITY;
        for v in g {
            if v.is_nan() {
                return Err(invalid("function has NaN values"));
            }
            min = min.min(*v);
        }
        if min == f64::NEG_INFINITY {
            return Err(invalid("function is unbounded below on the grid"));
        }
        let shift = if min < 0.0 { -min } else { 0.0 };

        let mut running = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut mass = 0.0;
        for (k, &i) in self.order.iter().enumerate() {
            running = running.max(g[i] + shift);
            let hi = self.levels[k].min(1.0);
            let lo = self.levels.get(k + 1).map_or(0.0, |l| l.min(1.0));
            let w = hi - lo;
            if w > 0.0 {
                sum += running * w;
                mass += w;
            }
        }
        Ok(Expectation { value: sum - shift * mass })
    }

    /// Lower expectation `c − upper(c − g)` with `c = max g`.
    pub fn lower(&self, g: &[f64], s_nodes: usize) -> Result<Expectation> {
        let c = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if c == f64::INFINITY {
            return Err(invalid("function is unbounded above on the grid"));
        }
        let flipped: Vec<f64> = g.iter().map(|v| c - v).collect();
        let up = self.upper(&flipped, s_nodes)?;
        Ok(Expectation { value: c - up.value })
    }
}

/// Possibilistic upper expectation of `g` (values on the contour grid).
pub fn choquet_upper_expectation(contour: &Contour, g: &[f64], s_nodes: usize) -> Result<Expectation> {
    LevelSets::of(contour).upper(g, s_nodes)
}

/// Possibilistic lower expectation of `g`.
pub fn choquet_lower_expectation(contour: &Contour, g: &[f64], s_nodes: usize) -> Result<Expectation> {
    LevelSets::of(contour).lower(g, s_nodes)
}

/// A probability distribution on the parameter space, drawn from directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSampler {
    PointMass { at: Vec<f64> },
    /// Normal with the given mean and variance.
    Normal { mean: f64, var: f64 },
    Uniform { lower: f64, upper: f64 },
    Beta { a: f64, b: f64 },
    StudentT { df: f64, location: f64, scale: f64 },
    Product { factors: Vec<PriorSampler> },
}

impl PriorSampler {
    pub fn dim(&self) -> usize {
        match self {
            PriorSampler::PointMass { at } => at.len(),
            PriorSampler::Product { factors } => factors.iter().map(|f| f.dim()).sum(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSampler::PointMass { at } if at.is_empty() => Err(invalid("empty point mass")),
            PriorSampler::Normal { var, .. } if !(*var >= 0.0) => Err(invalid("variance must be non-negative")),
            PriorSampler::Uniform { lower, upper } if !(lower < upper) => Err(invalid("uniform bounds must increase")),
            PriorSampler::Beta { a, b } if !(*a > 0.0 && *b > 0.0) => Err(invalid("beta shapes must be positive")),
            PriorSampler::StudentT { df, scale, .. } if !(*df > 0.0 && *scale > 0.0) => {
                Err(invalid("student t needs positive df and scale"))
            }
            PriorSampler::Product { factors } => factors.iter().try_for_each(|f| f.validate()),
            _ => Ok(()),
        }
    }

    /// Draws one parameter point, appending its coordinates to `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            PriorSampler::PointMass { at } => out.extend_from_slice(at),
            PriorSampler::Normal { mean, var } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                out.push(mean + var.sqrt() * z);
            }
            PriorSampler::Uniform { lower, upper } => out.push(rng.random_range(*lower..*upper)),
            PriorSampler::Beta { a, b } => {
                out.push(Beta::new(*a, *b).expect("validated beta").sample(rng));
            }
            PriorSampler::StudentT { df, location, scale } => {
                let t: f64 = StudentT::new(*df).expect("validated t").sample(rng);
                out.push(location + scale * t);
            }
            PriorSampler::Product { factors } => {
                for f in factors {
                    f.draw_into(rng, out);
                }
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.draw_into(rng, &mut out);
        out
    }
}

/// Verdict of a credal-membership audit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Member,
    NonMember,
    Inconclusive,
}

/// Outcome of [`credal_membership`]: the verdict and the worst α with its margin
/// `estimate − α − 3·stderr` (positive means a violation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Membership {
    pub verdict: Verdict,
    pub worst_alpha: f64,
    pub margin: f64,
}

/// Monte Carlo audit of `Q{q(Θ) ≤ α} ≤ α` on the α grid `j/(alpha_nodes+1)`.
///
/// Verdicts within one draw (1/reps) of the 3-standard-error band are inconclusive.
pub fn credal_membership(
    contour: &Contour,
    candidate: &PriorSampler,
    alpha_nodes: usize,
    reps: usize,
    seed: u64,
) -> Result<Membership> {
    if reps < 1000 {
        return Err(invalid(format!("credal membership needs at least 1000 draws, got {reps}")));
    }
    if alpha_nodes == 0 {
        return Err(invalid("alpha_nodes must be positive"));
    }
    candidate.validate()?;
    if candidate.dim() != contour.grid().dim() {
        return Err(Error::DomainMismatch { expected: contour.grid().dim(), found: candidate.dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qs = Vec::with_capacity(reps);
    let mut theta = Vec::with_capacity(candidate.dim());
    for _ in 0..reps {
        theta.clear();
        candidate.draw_into(&mut rng, &mut theta);
        if !contour.grid().contains(&theta) {
            return Err(Error::OutOfDomain(theta));
        }
        qs.push(contour.eval(&theta));
    }
    qs.sort_by(f64::total_cmp);

    let n = reps as f64;
    let mut worst = (f64::NAN, f64::NEG_INFINITY);
    for j in 1..=alpha_nodes {
        let alpha = j as f64 / (alpha_nodes + 1) as f64;
        let count = qs.partition_point(|q| *q <= alpha);
        let est = count as f64 / n;
        let se = (est * (1.0 - est) / n).sqrt();
        let margin = est - alpha - 3.0 * se;
        if margin > worst.1 {
            worst = (alpha, margin);
        }
    }
    let verdict = if worst.1 > 0.0 {
        Verdict::NonMember
    } else if worst.1 > -1.0 / n {
        Verdict::Inconclusive
    } else {
        Verdict::Member
    };
    Ok(Membership { verdict, worst_alpha: worst.0, margin: worst.1 })
}

/// Contour `ψ(y) = P{f(Y) ≤ f(y)}` for `Y ~ sampler`, by Monte Carlo, renormalized to grid sup 1.
pub fn prob_to_possibility<F>(
    label: impl Into<String>,
    grid: &Grid,
    density: F,
    sampler: &PriorSampler,
    reps: usize,
    seed: u64,
) -> Result<Contour>
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    if reps == 0 {
        return Err(invalid("reps must be positive"));
    }
    sampler.validate()?;
    if sampler.dim() != grid.dim() {
        return Err(Error::DomainMismatch { expected: grid.dim(), found: sampler.dim() });
    }
    let on_grid = grid.map(&density);
    if on_grid.iter().any(|d| d.is_nan() || *d < 0.0) {
        return Err(invalid("density must be non-negative on the grid"));
    }
    if on_grid.iter().all(|d| *d == 0.0) {
        return Err(invalid("density vanishes on the whole grid"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = Vec::with_capacity(sampler.dim());
    let mut dens: Vec<f64> = (0..reps)
        .map(|_| {
            theta.clear();
            sampler.draw_into(&mut rng, &mut theta);
            density(&theta)
        })
        .collect();
    dens.sort_by(f64::total_cmp);
    let dens = Arc::new(dens);
    let n = reps as f64;
    let raw = {
        let dens = dens.clone();
        move |d: f64| dens.partition_point(|x| *x <= d) as f64 / n
    };
    let sup = on_grid.iter().map(|d| raw(*d)).fold(0.0, f64::max);
    if sup == 0.0 {
        return Err(invalid("transform is zero on the grid"));
    }
    Contour::new(label, grid, move |t: &[f64]| (raw(density(t)) / sup).min(1.0))
}

/// A marginal contour together with the δ nodes whose band held no grid node.
#[derive(Clone, Debug)]
pub struct Marginal {
    pub contour: Contour,
    pub excluded: Vec<f64>,
}

/// Extension-principle marginal of a 2D contour for `feature`, on `delta_axis`.
///
/// Each δ node collects the 2D nodes with `|feature − δ| ≤ spacing/2`.
pub fn extension_marginal<F>(contour2d: &Contour, feature: F, delta_axis: &Axis) -> Result<Marginal>
where
    F: Fn(&[f64]) -> f64,
{
    let (ax, ay) = match contour2d.grid() {
        Grid::Plane(a, b) => (a, b),
        Grid::Line(_) => return Err(Error::DomainMismatch { expected: 2, found: 1 }),
    };
    if ax.nodes < 101 || ay.nodes < 101 {
        return Err(invalid("extension marginal needs at least 101 nodes per axis"));
    }
    let h = delta_axis.spacing();
    let half = 0.5 * h * (1.0 + 1e-9);
    let mut phi = vec![f64::NEG_INFINITY; delta_axis.nodes];
    let grid = contour2d.grid();
    for (i, v) in contour2d.values().iter().enumerate() {
        let p = grid.point(i);
        let f = feature(&p);
        if !f.is_finite() {
            continue;
        }
        let pos = ((f - delta_axis.lower) / h).round() as i64;
        for j in pos - 1..=pos + 1 {
            if j < 0 || j >= delta_axis.nodes as i64 {
                continue;
            }
            let j = j as usize;
            if (f - delta_axis.node(j)).abs() <= half {
                phi[j] = phi[j].max(*v);
            }
        }
    }
    let excluded: Vec<f64> = phi
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == f64::NEG_INFINITY)
        .map(|(j, _)| delta_axis.node(j))
        .collect();
    let sup = phi.iter().copied().fold(0.0, f64::max);
    if sup <= 0.0 {
        return Err(invalid("marginal contour vanishes everywhere"));
    }
    let values = phi.into_iter().map(|v| if v < 0.0 { 0.0 } else { v / sup }).collect();
    let contour = Contour::from_values(
        format!("marginal({})", contour2d.label()),
        &Grid::Line(*delta_axis),
        values,
    )?;
    Ok(Marginal { contour, excluded })
}

/// The treatment-minus-control difference θ_ecmo − θ_cmt for points (θ_cmt, θ_ecmo).
pub fn ware_delta(theta: &[f64]) -> f64 {
    theta[1] - theta[0]
}

/// Named prior contours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    /// `q(θ) = 1 − F_{χ²₁}(θ²/K)`.
    GaussianSurprise { k: f64 },
    /// `q(θ) = 1 ∧ K/|θ|`.
    MeanBound { k: f64 },
    /// `q(θ) = (K/5)·1(|θ| > 2K) + 1(|θ| ≤ 2K)`.
    EventBound { k: f64 },
    /// `q(θ) = {0.05·1(θ<0) + 1(θ≥0)}/(1+|θ|)`.
    MedianPrior,
    /// Product prior over (θ_cmt, θ_ecmo).
    WareJoint,
    Vacuous,
}

impl PriorKind {
    /// Parses a kind name, with `k` required for the K-indexed families.
    pub fn parse(name: &str, k: Option<f64>) -> Result<PriorKind> {
        let need_k = || k.ok_or_else(|| invalid(format!("prior {name} needs K")));
        Ok(match name {
            "gaussian_surprise" => PriorKind::GaussianSurprise { k: need_k()? },
            "mean_bound" => PriorKind::MeanBound { k: need_k()? },
            "event_bound" => PriorKind::EventBound { k: need_k()? },
            "median_prior" => PriorKind::MedianPrior,
            "ware_joint" => PriorKind::WareJoint,
            "vacuous" => PriorKind::Vacuous,
            other => return Err(invalid(format!("unknown prior kind {other}"))),
        })
    }

    pub fn label(&self) -> String {
        match self {
            PriorKind::GaussianSurprise { k } => format!("gaussian_surprise(K={k})"),
            PriorKind::MeanBound { k } => format!("mean_bound(K={k})"),
            PriorKind::EventBound { k } => format!("event_bound(K={k})"),
            PriorKind::MedianPrior => "median_prior".into(),
            PriorKind::WareJoint => "ware_joint".into(),
            PriorKind::Vacuous => "vacuous".into(),
        }
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        let k = match self {
            PriorKind::GaussianSurprise { k } | PriorKind::MeanBound { k } | PriorKind::EventBound { k } => Some(*k),
            _ => None,
        };
        if let Some(k) = k {
            if !(k > 0.0 && k.is_finite()) {
                return Err(invalid(format!("K must be positive, got {k}")));
            }
        }
        if let PriorKind::EventBound { k } = self {
            if *k > 5.0 {
                return Err(invalid("event_bound needs K ≤ 5"));
            }
        }
        let want = match self {
            PriorKind::WareJoint => Some(2),
            PriorKind::Vacuous => None,
            _ => Some(1),
        };
        if let Some(d) = want {
            if grid.dim() != d {
                return Err(Error::DomainMismatch { expected: d, found: grid.dim() });
            }
        }
        Ok(())
    }

    /// Closed-form contour evaluator.
    pub fn evaluator(&self) -> Arc<PointFn> {
        match *self {
            PriorKind::GaussianSurprise { k } => Arc::new(move |t: &[f64]| chi2_1_sf(t[0] * t[0] / k)),
            PriorKind::MeanBound { k } => Arc::new(move |t: &[f64]| {
                let a = t[0].abs();
                if a <= k {
                    1.0
                } else {
                    k / a
                }
            }),
            PriorKind::EventBound { k } => {
                Arc::new(move |t: &[f64]| if t[0].abs() <= 2.0 * k { 1.0 } else { k / 5.0 })
            }
            PriorKind::MedianPrior => Arc::new(|t: &[f64]| {
                let side = if t[0] < 0.0 { 0.05 } else { 1.0 };
                side / (1.0 + t[0].abs())
            }),
            PriorKind::WareJoint => Arc::new(|t: &[f64]| {
                let cmt = if t[0] <= 0.3 { 1.0 } else { 0.5 };
                let ecmo = if t[1] >= 0.8 { 1.0 } else { 0.1 };
                cmt * ecmo
            }),
            PriorKind::Vacuous => Arc::new(|_: &[f64]| 1.0),
        }
    }
}

/// Builds the named prior contour on `grid`.
pub fn make_prior(kind: PriorKind, grid: &Grid) -> Result<Contour> {
    kind.check(grid)?;
    let f = kind.evaluator();
    Contour::new(kind.label(), grid, move |t: &[f64]| f(t))
}

/// Normal density with the given mean and variance, as a point function.
pub fn normal_density(mean: f64, var: f64) -> impl Fn(&[f64]) -> f64 + Send + Sync + Clone {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    move |t: &[f64]| norm * (-(t[0] - mean).powi(2) / (2.0 * var)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    // Exact layer-cake integral, written independently of `LevelSets`.
    fn layer_cake(q: &[f64], g: &[f64]) -> f64 {
        let mut levels: Vec<f64> = q.iter().copied().filter(|v| *v > 0.0).collect();
        levels.sort_by(|a, b| b.total_cmp(a));
        levels.dedup();
        let mut total = 0.0;
        for (k, &lvl) in levels.iter().enumerate() {
            let next = levels.get(k + 1).copied().unwrap_or(0.0);
            let sup = q.iter().zip(g).filter(|(qi, _)| **qi >= lvl).map(|(_, gi)| *gi).fold(f64::MIN, f64::max);
            total += (lvl.min(1.0) - next.min(1.0)) * sup;
        }
        total
    }

    fn line(n: usize) -> Grid {
        Grid::line(-4.0, 4.0, n).unwrap()
    }

    #[test]
    fn axis_nodes_and_nearest() {
        let a = Axis::new(0.0, 1.0, 11).unwrap();
        assert_abs_diff_eq!(a.spacing(), 0.1, epsilon = 1e-15);
        assert_eq!(a.node(10), 1.0);
        assert_eq!(a.nearest(0.36), 4);
        assert!(Axis::new(1.0, 0.0, 5).is_err());
        assert!(Axis::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn plane_ordering_first_coordinate_outermost() {
        let g = Grid::unit_square(3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(1), [0.0, 0.5]);
        assert_eq!(g.point(3), [0.5, 0.0]);
    }

    #[test]
    fn contour_requires_normalization() {
        let g = line(101);
        assert!(matches!(
            Contour::new("half", &g, |_: &[f64]| 0.5),
            Err(Error::NotNormalized { .. })
        ));
        let c = Contour::new_unnormalized("half", &g, |_: &[f64]| 0.5).unwrap();
        assert!(!c.is_normalized());
    }

    #[test]
    fn upper_probability_examples() {
        let g = Grid::line(0.0, 14.0, 1401).unwrap();
        let q = Contour::new("seven", &g, |t: &[f64]| if t[0] <= 7.0 { 0.05 } else { 1.0 }).unwrap();
        let full = GridSet::full(&g);
        assert_eq!(upper_probability(&q, &full).unwrap(), 1.0);
        let h = GridSet::from_predicate(&g, |t| t[0] <= 7.0);
        assert_abs_diff_eq!(upper_probability(&q, &h).unwrap(), 0.05);
        assert_abs_diff_eq!(lower_probability(&q, &h.complement()).unwrap(), 0.95, epsilon = 1e-12);

        let sq = Grid::unit_square(101).unwrap();
        let w = make_prior(PriorKind::WareJoint, &sq).unwrap();
        let cmt_low = GridSet::from_predicate(&sq, |t| t[0] <= 0.3);
        assert_eq!(upper_probability(&w, &cmt_low).unwrap(), 1.0);
    }

    #[test]
    fn empty_hypothesis_is_an_error() {
        let g = line(11);
        let q = make_prior(PriorKind::Vacuous, &g).unwrap();
        let none = GridSet::from_predicate(&g, |_| false);
        assert!(matches!(upper_probability(&q, &none), Err(Error::EmptyHypothesis)));
    }

    #[test]
    fn choquet_constant_and_indicator() {
        let g = line(801);
        let q = make_prior(PriorKind::GaussianSurprise { k: 1.0 }, &g).unwrap();
        let c = vec![3.5; g.len()];
        assert_abs_diff_eq!(choquet_upper_expectation(&q, &c, 2001).unwrap().value, 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(choquet_lower_expectation(&q, &c, 2001).unwrap().value, 3.5, epsilon = 1e-12);
        let h = GridSet::from_predicate(&g, |t| t[0] > 1.3);
        let ind: Vec<f64> = h.mask().iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        let up = choquet_upper_expectation(&q, &ind, 2001).unwrap().value;
        assert_abs_diff_eq!(up, upper_probability(&q, &h).unwrap(), epsilon = 1e-6);
        let low = choquet_lower_expectation(&q, &ind, 2001).unwrap().value;
        assert_abs_diff_eq!(low, lower_probability(&q, &h).unwrap(), epsilon = 1e-6);
    }

    #[test]
    fn choquet_matches_layer_cake_with_shift() {
        let g = line(401);
        let q = make_prior(PriorKind::MeanBound { k: 0.4 }, &g).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|i| (g.point(i)[0] * 1.7).sin() - 0.2).collect();
        let min = f.iter().copied().fold(f64::INFINITY, f64::min);
        let shifted: Vec<f64> = f.iter().map(|v| v - min).collect();
        let want = layer_cake(q.values(), &shifted) + min;
        assert_abs_diff_eq!(choquet_upper_expectation(&q, &f, 2001).unwrap().value, want, epsilon = 1e-12);
    }

    #[test]
    fn choquet_rejects_nan_and_reports_infinity() {
        let g = line(11);
        let q = make_prior(PriorKind::Vacuous, &g).unwrap();
        let mut f = vec![1.0; 11];
        f[3] = f64::NAN;
        assert!(choquet_upper_expectation(&q, &f, 10).is_err());
        f[3] = f64::INFINITY;
        assert_eq!(choquet_upper_expectation(&q, &f, 10).unwrap().value, f64::INFINITY);
        assert!(choquet_lower_expectation(&q, &f, 10).is_err());
    }

    #[test]
    fn credal_membership_examples() {
        let g = line(801);
        let q = make_prior(PriorKind::GaussianSurprise { k: 0.1 }, &g).unwrap();
        let mode = credal_membership(&q, &PriorSampler::PointMass { at: vec![0.0] }, 99, 2000, 1).unwrap();
        assert_eq!(mode.verdict, Verdict::Member);
        // q(θ₀) = 0.3 at θ₀ = sqrt(0.1 · χ²₁ isf(0.3)).
        let theta0 = (0.1f64 * 1.074_194_170_857_572_2).sqrt();
        assert_abs_diff_eq!(q.eval(&[theta0]), 0.3, epsilon = 1e-9);
        let off = credal_membership(&q, &PriorSampler::PointMass { at: vec![theta0] }, 99, 2000, 1).unwrap();
        assert_eq!(off.verdict, Verdict::NonMember);
        let normal = credal_membership(&q, &PriorSampler::Normal { mean: 0.0, var: 0.1 }, 99, 20_000, 7).unwrap();
        assert_eq!(normal.verdict, Verdict::Member);
        let outside = credal_membership(&q, &PriorSampler::PointMass { at: vec![9.0] }, 99, 2000, 1);
        assert!(matches!(outside, Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn prob_to_possibility_examples() {
        let g = line(161);
        let psi = prob_to_possibility("normal", &g, normal_density(0.0, 1.0), &PriorSampler::Normal { mean: 0.0, var: 1.0 }, 200_000, 3)
            .unwrap();
        assert_abs_diff_eq!(psi.eval(&[0.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(psi.eval(&[1.96]), 0.05, epsilon = 3e-3);
        let u = prob_to_possibility(
            "uniform",
            &Grid::line(0.0, 1.0, 11).unwrap(),
            |_: &[f64]| 1.0,
            &PriorSampler::Uniform { lower: 0.0, upper: 1.0 },
            1000,
            3,
        )
        .unwrap();
        assert!(u.values().iter().all(|v| *v == 1.0));
        assert!(prob_to_possibility("zero", &g, |_: &[f64]| 0.0, &PriorSampler::Uniform { lower: 0.0, upper: 1.0 }, 10, 1).is_err());
    }

    #[test]
    fn ware_prior_marginal_examples() {
        let sq = Grid::unit_square(201).unwrap();
        let w = make_prior(PriorKind::WareJoint, &sq).unwrap();
        let delta = Axis::new(-1.0, 1.0, 201).unwrap();
        let m = extension_marginal(&w, ware_delta, &delta).unwrap();
        assert!(m.excluded.is_empty());
        assert_abs_diff_eq!(m.contour.eval(&[0.7]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.contour.eval(&[0.0]), 0.5, epsilon = 1e-12);
        let flat = make_prior(PriorKind::Vacuous, &sq).unwrap();
        let mf = extension_marginal(&flat, ware_delta, &delta).unwrap();
        assert!(mf.contour.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn marginal_needs_resolution() {
        let sq = Grid::unit_square(51).unwrap();
        let w = make_prior(PriorKind::WareJoint, &sq).unwrap();
        assert!(extension_marginal(&w, ware_delta, &Axis::new(-1.0, 1.0, 51).unwrap()).is_err());
    }

    #[test]
    fn marginal_reports_empty_bands() {
        let sq = Grid::unit_square(101).unwrap();
        let w = make_prior(PriorKind::WareJoint, &sq).unwrap();
        let wide = Axis::new(-3.0, 3.0, 601).unwrap();
        let m = extension_marginal(&w, ware_delta, &wide).unwrap();
        assert!(m.excluded.iter().any(|d| *d < -1.5));
        assert!(m.contour.is_normalized());
    }

    #[test]
    fn make_prior_examples() {
        let g = line(4001);
        let gs = make_prior(PriorKind::GaussianSurprise { k: 0.1 }, &g).unwrap();
        assert_eq!(gs.eval(&[0.0]), 1.0);
        assert_abs_diff_eq!(gs.eval(&[0.7]), 0.026_856_695_507_524_41, epsilon = 1e-10);
        let mb = make_prior(PriorKind::MeanBound { k: 0.4 }, &g).unwrap();
        assert_abs_diff_eq!(mb.eval(&[0.8]), 0.5);
        assert!(make_prior(PriorKind::MeanBound { k: 0.0 }, &g).is_err());
        assert!(make_prior(PriorKind::EventBound { k: 6.0 }, &g).is_err());
        assert!(make_prior(PriorKind::WareJoint, &g).is_err());
        assert!(PriorKind::parse("gaussian_surprise", None).is_err());
        assert!(PriorKind::parse("nope", Some(1.0)).is_err());
    }

    #[test]
    fn contour_csv_header() {
        let g = Grid::line(0.0, 1.0, 3).unwrap();
        let q = make_prior(PriorKind::Vacuous, &g).unwrap();
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta,value\n"));
        assert_eq!(text.lines().count(), 4);
    }

    fn random_values() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (5usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(0.0f64..3.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn upper_probability_monotone((qv, _, _) in random_values(), cut in 0.0f64..1.0, extra in 0.0f64..1.0) {
            let n = qv.len();
            let g = Grid::line(0.0, 1.0, n).unwrap();
            let mut qv = qv;
            qv[0] = 1.0;
            let q = Contour::from_values("r", &g, qv).unwrap();
            let small = GridSet::from_predicate(&g, |t| t[0] <= cut);
            let big = GridSet::from_predicate(&g, |t| t[0] <= (cut + extra).min(1.0));
            prop_assert!(small.is_subset(&big));
            let us = upper_probability(&q, &small).unwrap();
            let ub = upper_probability(&q, &big).unwrap();
            prop_assert!(us <= ub);
            let comp = big.complement();
            if !comp.is_empty() {
                prop_assert_eq!(lower_probability(&q, &big).unwrap(), 1.0 - upper_probability(&q, &comp).unwrap());
            }
        }

        #[test]
        fn choquet_monotone_and_exact((qv, f, bump) in random_values()) {
            let n = qv.len();
            let g = Grid::line(0.0, 1.0, n).unwrap();
            let mut qv = qv;
            qv[n / 2] = 1.0;
            let q = Contour::from_values("r", &g, qv.clone()).unwrap();
            let f2: Vec<f64> = f.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let lo = choquet_upper_expectation(&q, &f, 2001).unwrap().value;
            let hi = choquet_upper_expectation(&q, &f2, 2001).unwrap().value;
            prop_assert!(lo <= hi + 1e-12);
            let min = f.iter().copied().fold(f64::INFINITY, f64::min);
            let shifted: Vec<f64> = f.iter().map(|v| v - min).collect();
            prop_assert!((lo - (layer_cake(&qv, &shifted) + min)).abs() < 1e-9);
            let lower = choquet_lower_expectation(&q, &f, 2001).unwrap().value;
            prop_assert!(lower <= lo + 1e-12);
        }

        #[test]
        fn marginal_is_normalized(seed in any::<u64>()) {
            let sq = Grid::unit_square(101).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut vals: Vec<f64> = (0..sq.len()).map(|_| rng.random::<f64>() * 0.9).collect();
            let top = rng.random_range(0..sq.len());
            vals[top] = 1.0;
            let c = Contour::from_values("r", &sq, vals).unwrap();
            let m = extension_marginal(&c, ware_delta, &Axis::new(-1.0, 1.0, 101).unwrap()).unwrap();
            prop_assert!(m.contour.sup() >= 1.0 - 1e-9);
        }
    }
}
