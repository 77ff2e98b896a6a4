//! Warm starts: a multiple-cut proximal bundle method, a nonsmooth BFGS,
//! bundle-size estimation and initial-bundle selection.

use nalgebra::{DMatrix, DVector};

use crate::bundle::{coincide, sigma_check, Bundle};
use crate::error::{Error, Result};
use crate::linalg::{lifted_columns, singular_values};
use crate::oracle::{check_finite, Evaluation, Oracle};
use crate::qp::{solve_proximal_cut_qp, LinearModel};

/// Dual weight above which a cut counts as strongly active.
pub const STRONG_ACTIVITY: f64 = 1e-8;

/// Default relative tolerance for [`estimate_bundle_size`]. Candidates from one
/// smooth piece a distance `δ` apart still differ by about `|∇²f|·δ` in gradient,
/// which at the usual phase-one accuracy (`δ ≈ 1e-3`) sits near `1e-4` relative.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-3;

/// Where a candidate set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSource {
    /// Cuts with dual weight above [`STRONG_ACTIVITY`] at the last bundle-method iteration.
    StronglyActiveCuts,
    /// The final `min(2n, visited)` BFGS iterates.
    LastIterates,
}

/// Sampled points near a minimizer, used to size and seed the bundle.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub points: Vec<Evaluation>,
    pub source: CandidateSource,
}

impl CandidateSet {
    pub fn new(points: Vec<Evaluation>, source: CandidateSource) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("candidate set is empty".into()));
        }
        let n = points[0].sample.dim();
        for p in &points {
            if p.sample.dim() != n {
                return Err(Error::InvalidInput("candidates have different dimensions".into()));
            }
            check_finite(&p.sample.gradient, "candidate gradient")?;
            check_finite(&p.sample.point, "candidate point")?;
        }
        Ok(Self { points, source })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn gradients(&self) -> Vec<DVector<f64>> {
        self.points.iter().map(|p| p.sample.gradient.clone()).collect()
    }
}

/// Parameters of the multiple-cut proximal bundle method.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleMethodConfig {
    pub rho: f64,
    pub beta: f64,
    pub epsilon_bar: f64,
    pub max_iterations: usize,
    /// Drop the cut with the smallest dual weight once more than this many are held.
    pub cut_cap: Option<usize>,
}

impl Default for BundleMethodConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            beta: 1e-5,
            epsilon_bar: 1e-6,
            max_iterations: 1000,
            cut_cap: None,
        }
    }
}

impl BundleMethodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidInput(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidInput(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.epsilon_bar >= 0.0) {
            return Err(Error::InvalidInput("epsilon_bar must be nonnegative".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        if self.cut_cap == Some(0) {
            return Err(Error::InvalidInput("cut_cap must be positive".into()));
        }
        Ok(())
    }
}

/// One bundle-method iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleMethodRecord {
    pub iteration: usize,
    /// Oracle calls so far, including the one at the start point.
    pub oracle_calls: usize,
    /// `f(z)` before the step.
    pub center_value: f64,
    /// `max_s l_s(x̂)`.
    pub model_value: f64,
    /// `f(z) − max_s l_s(x̂)`.
    pub gap: f64,
    /// `f(x̂)`; `None` on the stopping iteration, which makes no oracle call.
    pub trial_value: Option<f64>,
    pub serious: bool,
    pub cuts: usize,
}

#[derive(Debug, Clone)]
pub struct BundleMethodResult {
    pub center: Evaluation,
    pub candidates: CandidateSet,
    pub records: Vec<BundleMethodRecord>,
    /// The iteration cap was hit before the gap fell below `epsilon_bar`.
    pub truncated: bool,
    pub oracle_calls: usize,
}

impl BundleMethodResult {
    /// Center value after every serious step, starting with `f(start)`.
    pub fn serious_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(first) = self.records.first() {
            out.push(first.center_value);
        }
        for r in self.records.iter().filter(|r| r.serious) {
            out.push(r.trial_value.expect("serious steps evaluate the trial point"));
        }
        out
    }
}

/// Multiple-cut proximal bundle method for convex `f`, started from `S = {start}`.
pub fn run_bundle_method<O: Oracle + ?Sized>(
    oracle: &O,
    start: &DVector<f64>,
    config: &BundleMethodConfig,
) -> Result<BundleMethodResult> {
    config.validate()?;
    check_start(oracle, start)?;
    let first = oracle.evaluate(start);
    first.sample.validate()?;
    let mut calls = 1;
    let mut cuts: Vec<(LinearModel, Evaluation)> = vec![(LinearModel::from(&first.sample), first.clone())];
    let mut center = first;
    let mut records = Vec::new();
    let mut weights = DVector::from_element(1, 1.0);

    for iteration in 0..config.max_iterations {
        let models: Vec<LinearModel> = cuts.iter().map(|(l, _)| l.clone()).collect();
        let step = solve_proximal_cut_qp(&models, &center.sample.point, config.rho)?;
        weights = step.weights;
        let fz = center.sample.value;
        let gap = fz - step.model_value;
        let mut record = BundleMethodRecord {
            iteration,
            oracle_calls: calls,
            center_value: fz,
            model_value: step.model_value,
            gap,
            trial_value: None,
            serious: false,
            cuts: cuts.len(),
        };
        if gap <= config.epsilon_bar {
            records.push(record);
            return finish(center, cuts, &weights, records, false, calls);
        }

        let trial = oracle.evaluate(&step.point);
        trial.sample.validate()?;
        calls += 1;
        record.oracle_calls = calls;
        record.trial_value = Some(trial.sample.value);
        record.serious = trial.sample.value <= fz - config.beta * gap;
        records.push(record);

        if let Some(cap) = config.cut_cap {
            if cuts.len() >= cap {
                let drop = weights
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .expect("nonempty");
                cuts.remove(drop);
                weights = weights.remove_row(drop);
            }
        }
        if records.last().expect("just pushed").serious {
            center = trial.clone();
        }
        cuts.push((LinearModel::from(&trial.sample), trial));
        weights = weights.push(0.0);
    }
    finish(center, cuts, &weights, records, true, calls)
}

fn finish(
    center: Evaluation,
    cuts: Vec<(LinearModel, Evaluation)>,
    weights: &DVector<f64>,
    records: Vec<BundleMethodRecord>,
    truncated: bool,
    oracle_calls: usize,
) -> Result<BundleMethodResult> {
    let mut points: Vec<Evaluation> = cuts
        .into_iter()
        .zip(weights.iter())
        .filter(|(_, &a)| a > STRONG_ACTIVITY)
        .map(|((_, e), _)| e)
        .collect();
    if points.is_empty() {
        points.push(center.clone());
    }
    Ok(BundleMethodResult {
        center,
        candidates: CandidateSet::new(points, CandidateSource::StronglyActiveCuts)?,
        records,
        truncated,
        oracle_calls,
    })
}

fn check_start<O: Oracle + ?Sized>(oracle: &O, start: &DVector<f64>) -> Result<()> {
    if start.len() != oracle.dim() {
        return Err(Error::InvalidInput(format!(
            "start has dimension {}, oracle expects {}",
            start.len(),
            oracle.dim()
        )));
    }
    check_finite(start, "start point")
}

/// Nonsmooth BFGS parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsConfig {
    pub max_iterations: usize,
    /// Sufficient-decrease constant of the weak Wolfe conditions.
    pub c1: f64,
    /// Curvature constant of the weak Wolfe conditions.
    pub c2: f64,
    /// The line search breaks down after this many bisections.
    pub max_bisections: usize,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            c1: 1e-4,
            c2: 0.5,
            max_bisections: 50,
        }
    }
}

impl BfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "weak Wolfe constants need 0 < c1 < c2 < 1, got {} and {}",
                self.c1, self.c2
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Why BFGS stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfgsStop {
    IterationCap,
    /// No weak Wolfe point was found, or the search direction stopped descending.
    Breakdown,
}

/// One accepted BFGS step.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsRecord {
    pub iteration: usize,
    pub oracle_calls: usize,
    pub value: f64,
    pub best_value: f64,
    pub step_length: f64,
    /// Whether the inverse-Hessian update was applied (`sᵀy > 0`).
    pub updated: bool,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub last: Evaluation,
    pub best: Evaluation,
    pub candidates: CandidateSet,
    pub records: Vec<BfgsRecord>,
    pub stop: BfgsStop,
    pub oracle_calls: usize,
}

/// BFGS with a weak Wolfe bracketing line search, run until breakdown or the cap.
pub fn run_nonsmooth_bfgs<O: Oracle + ?Sized>(
    oracle: &O,
    start: &DVector<f64>,
    config: &BfgsConfig,
) -> Result<BfgsResult> {
    config.validate()?;
    check_start(oracle, start)?;
    let n = start.len();
    let first = oracle.evaluate(start);
    first.sample.validate()?;
    if !first.in_domain {
        return Err(Error::InvalidInput("BFGS start is not in the smooth region".into()));
    }
    let mut calls = 1;
    let mut current = first;
    let mut best = current.clone();
    let mut visited = vec![current.clone()];
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut records = Vec::new();
    let mut stop = BfgsStop::IterationCap;

    for iteration in 0..config.max_iterations {
        let g = &current.sample.gradient;
        let d = -(&h * g);
        let slope = g.dot(&d);
        if !(slope < 0.0) {
            stop = BfgsStop::Breakdown;
            break;
        }
        let Some((t, next)) = weak_wolfe(oracle, &current, &d, slope, config, &mut calls)? else {
            stop = BfgsStop::Breakdown;
            break;
        };
        let s = &next.sample.point - &current.sample.point;
        let y = &next.sample.gradient - &current.sample.gradient;
        let sy = s.dot(&y);
        let updated = sy > 0.0;
        if updated {
            let r = 1.0 / sy;
            let left = DMatrix::identity(n, n) - &s * y.transpose() * r;
            h = &left * &h * left.transpose() + &s * s.transpose() * r;
        }
        if next.sample.value < best.sample.value {
            best = next.clone();
        }
        records.push(BfgsRecord {
            iteration,
            oracle_calls: calls,
            value: next.sample.value,
            best_value: best.sample.value,
            step_length: t,
            updated,
        });
        current = next;
        visited.push(current.clone());
    }

    let tail = visited.len().min(2 * n);
    let mut points: Vec<Evaluation> = Vec::with_capacity(tail);
    for e in visited.split_off(visited.len() - tail) {
        if e.in_domain && !points.iter().any(|p| coincide(&p.sample.point, &e.sample.point)) {
            points.push(e);
        }
    }
    Ok(BfgsResult {
        last: current,
        best,
        candidates: CandidateSet::new(points, CandidateSource::LastIterates)?,
        records,
        stop,
        oracle_calls: calls,
    })
}

/// Bracketing search for `t` with `f(x+td) ≤ f(x) + c1·t·slope` and `∇f(x+td)ᵀd ≥ c2·slope`.
fn weak_wolfe<O: Oracle + ?Sized>(
    oracle: &O,
    at: &Evaluation,
    d: &DVector<f64>,
    slope: f64,
    config: &BfgsConfig,
    calls: &mut usize,
) -> Result<Option<(f64, Evaluation)>> {
    let x = &at.sample.point;
    let f0 = at.sample.value;
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut t = 1.0;
    let mut bisections = 0;
    let mut doublings = 0;
    loop {
        let trial_point = x + d * t;
        if coincide(&trial_point, x) {
            return Ok(None);
        }
        let e = oracle.evaluate(&trial_point);
        *calls += 1;
        let value_ok = e.sample.value.is_finite();
        if !value_ok || e.sample.value > f0 + config.c1 * t * slope {
            hi = t;
        } else if e.sample.gradient.dot(d) < config.c2 * slope {
            lo = t;
        } else {
            if e.sample.validate().is_err() {
                return Ok(None);
            }
            return Ok(Some((t, e)));
        }
        if hi.is_finite() {
            bisections += 1;
            if bisections > config.max_bisections {
                return Ok(None);
            }
            t = 0.5 * (lo + hi);
        } else {
            doublings += 1;
            if doublings > config.max_bisections {
                return Ok(None);
            }
            t = 2.0 * lo;
        }
    }
}

/// Approximate rank of the matrix with columns `(∇f(x); c)`, where `c` is the largest
/// gradient norm, counting singular values above `rank_tolerance` times the largest.
pub fn estimate_bundle_size(candidates: &CandidateSet, rank_tolerance: f64) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("candidate set is empty".into()));
    }
    if !(rank_tolerance > 0.0 && rank_tolerance < 1.0) {
        return Err(Error::InvalidInput(format!(
            "rank tolerance must lie in (0, 1), got {rank_tolerance}"
        )));
    }
    let sv = singular_values(&scaled_columns(&candidates.gradients()))?;
    let top = sv[0];
    Ok(sv.iter().filter(|&&s| s > rank_tolerance * top).count().max(1))
}

/// Lifted gradient columns with the constant row scaled to the largest gradient norm,
/// so that rescaling every gradient leaves the column space unchanged.
fn scaled_columns(gradients: &[DVector<f64>]) -> DMatrix<f64> {
    let scale = gradients.iter().map(|g| g.norm()).fold(0.0, f64::max);
    lifted_columns(gradients, if scale > 0.0 { scale } else { 1.0 })
}

/// Picks `k` candidates with robustly affinely independent gradients by pivoted
/// Gram-Schmidt on the lifted gradient columns.
pub fn select_initial_bundle(candidates: &CandidateSet, k: usize) -> Result<Bundle> {
    if k == 0 {
        return Err(Error::InvalidInput("bundle size must be positive".into()));
    }
    let usable: Vec<&Evaluation> = candidates.points.iter().filter(|e| e.in_domain).collect();
    if usable.len() < k {
        return Err(Error::InsufficientCandidates {
            needed: k,
            available: usable.len(),
        });
    }
    let gradients: Vec<DVector<f64>> = usable.iter().map(|e| e.sample.gradient.clone()).collect();
    let mut columns = scaled_columns(&gradients);
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let pivot = (0..columns.ncols())
            .filter(|j| !chosen.contains(j))
            .max_by(|&a, &b| columns.column(a).norm().total_cmp(&columns.column(b).norm()))
            .expect("enough columns remain");
        chosen.push(pivot);
        let norm = columns.column(pivot).norm();
        if norm == 0.0 {
            continue;
        }
        let q = columns.column(pivot) / norm;
        for j in 0..columns.ncols() {
            if !chosen.contains(&j) {
                let proj = q.dot(&columns.column(j));
                columns.column_mut(j).axpy(-proj, &q, 1.0);
            }
        }
    }
    chosen.sort_unstable();
    let selected: Vec<DVector<f64>> = chosen.iter().map(|&j| gradients[j].clone()).collect();
    let sigma = sigma_check(&selected)?;
    if sigma < 1e-12 {
        return Err(Error::DegenerateCandidates { sigma });
    }
    Bundle::from_evaluations(chosen.iter().map(|&j| usable[j].clone()).collect())
        .map_err(|_| Error::DegenerateCandidates { sigma: 0.0 })
}
