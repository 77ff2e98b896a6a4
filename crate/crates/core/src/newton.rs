//! The bundle Newton driver loops.
//!
//! All three variants share one loop. They differ only in where the affine
//! models `l_s` come from:
//!
//! - [`run_convex`]: `l_s` is the linearization of `f` at `s`.
//! - [`run_sum`]: for `F = f + r`, `l_s` linearizes `f` only, while the
//!   quadratic models, the optimality measure and the stopping tests use `F`.
//! - [`run_weakly_convex`]: `l_s` linearizes `F + (η/2)|·|²`, with `η` fixed or
//!   recomputed from the bundle Hessians every iteration.

use nalgebra::{DMatrix, DVector};

use crate::bundle::{replace_reference, sigma_check, theta, Bundle};
use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, symmetric_condition};
use crate::oracle::{Evaluation, Oracle, OracleSample, Region};
use crate::qp::{
    build_constraints, solve_kkt_full, solve_kkt_reduced, LinearModel, NewtonSubproblem,
    QuadraticModel, SubproblemSolution,
};

/// Weak-convexity shift used by [`run_weakly_convex`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eta {
    Fixed(f64),
    /// `max_s λ_max(−∇²F(s)) + 1e-6·(1 + |·|)`, recomputed every iteration.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Convex,
    Sum,
    WeaklyConvex,
}

/// Which linear system solves the Newton subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemPath {
    /// Full KKT system, switching to the projected reduced system when some
    /// bundle Hessian has condition number above the configured threshold.
    Auto,
    Full,
    Reduced { project_anchors: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    /// Diameter tolerance for the near-optimality test.
    pub epsilon_bar: f64,
    /// Measure tolerance for the near-optimality test.
    pub delta_bar: f64,
    /// Affine-independence threshold on the `k`-th singular value; 0 disables the check.
    pub sigma: f64,
    pub eta: Eta,
    pub max_iterations: usize,
    /// Iterations without a `1e-3` relative drop in diameter before stopping;
    /// `None` means `5k`.
    pub stall_window: Option<usize>,
    pub variant: Variant,
    pub path: SubproblemPath,
    pub hessian_condition_threshold: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            epsilon_bar: 0.0,
            delta_bar: 0.0,
            sigma: 1e-10,
            eta: Eta::Fixed(0.0),
            max_iterations: 200,
            stall_window: None,
            variant: Variant::Convex,
            path: SubproblemPath::Auto,
            hessian_condition_threshold: 1e8,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !nonneg(self.epsilon_bar) || !nonneg(self.delta_bar) || !nonneg(self.sigma) {
            return Err(Error::InvalidInput(
                "epsilon_bar, delta_bar and sigma must be finite and nonnegative".into(),
            ));
        }
        if let Eta::Fixed(eta) = self.eta {
            if !nonneg(eta) {
                return Err(Error::InvalidInput(format!("eta must be nonnegative, got {eta}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        if self.stall_window == Some(0) {
            return Err(Error::InvalidInput("stall_window must be positive".into()));
        }
        if !(self.hessian_condition_threshold > 1.0) {
            return Err(Error::InvalidInput("hessian_condition_threshold must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminationTag {
    NearlyOptimal,
    NonsmoothPoint,
    AffineDependentGradients,
    UnboundedSubproblem,
    IterationCap,
    Stalled,
}

impl TerminationTag {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationTag::NearlyOptimal => "NearlyOptimal",
            TerminationTag::NonsmoothPoint => "NonsmoothPoint",
            TerminationTag::AffineDependentGradients => "AffineDependentGradients",
            TerminationTag::UnboundedSubproblem => "UnboundedSubproblem",
            TerminationTag::IterationCap => "IterationCap",
            TerminationTag::Stalled => "Stalled",
        }
    }
}

impl std::fmt::Display for TerminationTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminationReason {
    pub tag: TerminationTag,
    pub detail: String,
}

impl TerminationReason {
    fn new(tag: TerminationTag, detail: impl Into<String>) -> Self {
        Self { tag, detail: detail.into() }
    }
}

/// One completed iteration. Diameter, measure and multipliers describe the
/// bundle the iteration started from.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub diameter: f64,
    pub theta: f64,
    /// Smallest objective value sampled so far, including `xhat`.
    pub best_value: f64,
    pub lambda: DVector<f64>,
    /// Bundle slot that `xhat` replaced.
    pub replaced: usize,
    /// Oracle calls made by the driver so far.
    pub oracle_calls: usize,
    pub xhat: DVector<f64>,
    /// Shift used in the linear models (0 outside the weakly convex variant).
    pub eta: f64,
    pub kkt_residual: f64,
    pub xhat_region: Option<Region>,
    pub replaced_region: Option<Region>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTrace {
    pub records: Vec<IterationRecord>,
    pub termination: TerminationReason,
    /// Bundle at termination.
    pub bundle: Bundle,
    /// Diameter and measure of the final bundle, when they were computed.
    pub final_diameter: f64,
    pub final_theta: Option<f64>,
    pub final_lambda: Option<DVector<f64>>,
    /// The trial point that ended a `NonsmoothPoint` run. It was evaluated but
    /// cannot join the bundle.
    pub final_trial: Option<Evaluation>,
    pub oracle_calls: usize,
}

impl ConvergenceTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Smallest objective value seen, including the initial bundle and a final
    /// nonsmooth trial point.
    pub fn best_value(&self) -> f64 {
        let trial = self.final_trial.as_ref().map_or(f64::INFINITY, |e| e.sample.value);
        self.records
            .last()
            .map_or(self.bundle.best_value(), |r| r.best_value.min(self.bundle.best_value()))
            .min(trial)
    }

    /// Weighted center `Σ λ_s s` of the final bundle, if the final multipliers are known.
    pub fn final_center(&self) -> Option<DVector<f64>> {
        self.final_lambda.as_ref().map(|l| {
            let mut c = DVector::zeros(self.bundle.dim());
            for (s, &w) in self.bundle.samples().iter().zip(l.iter()) {
                c += &s.point * w;
            }
            c
        })
    }
}

/// Where the affine models come from.
enum Models<'a> {
    Objective,
    Component { f: &'a dyn Oracle, r: &'a dyn Oracle },
    Shifted(Eta),
}

struct Driver<'a> {
    objective: &'a dyn Oracle,
    models: Models<'a>,
    config: &'a NewtonConfig,
    calls: usize,
}

fn add_samples(a: &OracleSample, b: &OracleSample) -> OracleSample {
    OracleSample {
        point: a.point.clone(),
        value: a.value + b.value,
        gradient: &a.gradient + &b.gradient,
        hessian: &a.hessian + &b.hessian,
    }
}

impl Driver<'_> {
    /// Objective evaluation plus the sample that feeds the affine model.
    fn sample(&mut self, x: &DVector<f64>) -> (Evaluation, OracleSample) {
        self.calls += 1;
        match &self.models {
            Models::Component { f, r } => {
                let ef = f.evaluate(x);
                let er = r.evaluate(x);
                let total = Evaluation {
                    sample: add_samples(&ef.sample, &er.sample),
                    in_domain: ef.in_domain && er.in_domain,
                    region: ef.region.or(er.region),
                };
                (total, ef.sample)
            }
            _ => {
                let e = self.objective.evaluate(x);
                let s = e.sample.clone();
                (e, s)
            }
        }
    }

    fn eta(&self, bundle: &Bundle) -> f64 {
        match self.models {
            Models::Shifted(Eta::Fixed(eta)) => eta,
            Models::Shifted(Eta::Dynamic) => {
                let top = bundle
                    .samples()
                    .iter()
                    .map(|s| max_eigenvalue(&(-&s.hessian)))
                    .fold(f64::NEG_INFINITY, f64::max);
                top + 1e-6 * (1.0 + top.abs())
            }
            _ => 0.0,
        }
    }

    fn linear_model(&self, s: &OracleSample, eta: f64) -> LinearModel {
        match self.models {
            Models::Shifted(_) => LinearModel::new(
                s.value + 0.5 * eta * s.point.norm_squared(),
                &s.gradient + &s.point * eta,
                s.point.clone(),
            ),
            _ => LinearModel::from(s),
        }
    }

    fn solve(&self, sub: &NewtonSubproblem) -> Result<SubproblemSolution> {
        let reduced = match self.config.path {
            SubproblemPath::Full => None,
            SubproblemPath::Reduced { project_anchors } => Some(project_anchors),
            SubproblemPath::Auto => sub
                .quadratic_models
                .iter()
                .any(|q| symmetric_condition(&q.hessian) > self.config.hessian_condition_threshold)
                .then_some(true),
        };
        match reduced {
            Some(project) => solve_kkt_reduced(sub, &build_constraints(sub)?, project),
            None => {
                let sol = solve_kkt_full(sub)?;
                if sol.bounded {
                    Ok(sol)
                } else {
                    Err(Error::UnboundedSubproblem { min_eigenvalue: sol.reduced_hessian_min_eig })
                }
            }
        }
    }

    fn run(mut self, initial: Bundle) -> Result<ConvergenceTrace> {
        self.config.validate()?;
        let n = self.objective.dim();
        if initial.dim() != n {
            return Err(Error::InvalidInput(format!(
                "bundle dimension {} differs from oracle dimension {n}",
                initial.dim()
            )));
        }
        let k = initial.k();

        // Re-sample for the sum variant, which needs f and r separately.
        let (mut bundle, mut linear) = match self.models {
            Models::Component { .. } => {
                let mut evals = Vec::with_capacity(k);
                let mut lin = Vec::with_capacity(k);
                for (i, s) in initial.samples().iter().enumerate() {
                    let (e, l) = self.sample(&s.point);
                    if !e.in_domain {
                        return Err(Error::InvalidInput(format!(
                            "initial point {i} is not in the smooth region"
                        )));
                    }
                    evals.push(e);
                    lin.push(l);
                }
                (Bundle::from_evaluations(evals)?, lin)
            }
            _ => (initial.clone(), initial.samples().to_vec()),
        };

        let window = self.config.stall_window.unwrap_or(5 * k);
        let mut records: Vec<IterationRecord> = Vec::new();
        let mut best = bundle.best_value();

        let finish = |bundle: Bundle,
                      records: Vec<IterationRecord>,
                      tag: TerminationTag,
                      detail: String,
                      theta: Option<(f64, DVector<f64>)>,
                      calls: usize| {
            let (final_theta, final_lambda) = match theta {
                Some((t, l)) => (Some(t), Some(l)),
                None => (None, None),
            };
            ConvergenceTrace {
                final_diameter: bundle.diameter(),
                bundle,
                records,
                termination: TerminationReason::new(tag, detail),
                final_theta,
                final_lambda,
                final_trial: None,
                oracle_calls: calls,
            }
        };

        for iteration in 0.. {
            let gradients = bundle.gradients();
            if self.config.sigma > 0.0 {
                let sigma = if k > n + 1 { 0.0 } else { sigma_check(&gradients)? };
                if sigma < self.config.sigma {
                    let detail = format!("sigma {sigma:e} below {:e}", self.config.sigma);
                    return Ok(finish(
                        bundle,
                        records,
                        TerminationTag::AffineDependentGradients,
                        detail,
                        None,
                        self.calls,
                    ));
                }
            }
            let mult = match theta(&gradients) {
                Ok(m) => m,
                Err(e) => {
                    return Ok(finish(
                        bundle,
                        records,
                        TerminationTag::Stalled,
                        format!("measure: {e}"),
                        None,
                        self.calls,
                    ))
                }
            };
            let diameter = bundle.diameter();
            let measured = Some((mult.theta, mult.lambda.clone()));
            if diameter < self.config.epsilon_bar && mult.theta < self.config.delta_bar {
                let detail = format!("diam {diameter:e}, theta {:e}", mult.theta);
                return Ok(finish(
                    bundle,
                    records,
                    TerminationTag::NearlyOptimal,
                    detail,
                    measured,
                    self.calls,
                ));
            }
            if iteration >= self.config.max_iterations {
                let detail = format!("{iteration} iterations");
                return Ok(finish(
                    bundle,
                    records,
                    TerminationTag::IterationCap,
                    detail,
                    measured,
                    self.calls,
                ));
            }
            if records.len() >= window {
                let start = records[records.len() - window].diameter;
                let recent = records[records.len() - window + 1..]
                    .iter()
                    .map(|r| r.diameter)
                    .fold(diameter, f64::min);
                if recent > (1.0 - 1e-3) * start {
                    let detail =
                        format!("diameter {recent:e} has not dropped below {start:e} in {window} iterations");
                    return Ok(finish(
                        bundle,
                        records,
                        TerminationTag::Stalled,
                        detail,
                        measured,
                        self.calls,
                    ));
                }
            }

            let eta = self.eta(&bundle);
            let sub = NewtonSubproblem::new(
                mult.lambda.clone(),
                linear.iter().map(|s| self.linear_model(s, eta)).collect(),
                bundle.samples().iter().map(QuadraticModel::from).collect(),
            )?;
            let sol = match self.solve(&sub) {
                Ok(s) => s,
                Err(Error::UnboundedSubproblem { min_eigenvalue }) => {
                    return Ok(finish(
                        bundle,
                        records,
                        TerminationTag::UnboundedSubproblem,
                        format!("reduced Hessian eigenvalue {min_eigenvalue:e}"),
                        measured,
                        self.calls,
                    ))
                }
                Err(e @ (Error::DegenerateConstraints { .. } | Error::SingularSystem { .. })) => {
                    return Ok(finish(
                        bundle,
                        records,
                        TerminationTag::AffineDependentGradients,
                        e.to_string(),
                        measured,
                        self.calls,
                    ))
                }
                Err(e) => return Err(e),
            };
            if !sol.xhat.iter().all(|v| v.is_finite()) {
                return Ok(finish(
                    bundle,
                    records,
                    TerminationTag::AffineDependentGradients,
                    "subproblem solution is not finite".into(),
                    measured,
                    self.calls,
                ));
            }

            let (eval, lin) = self.sample(&sol.xhat);
            if !eval.in_domain {
                let detail = format!("objective is not smooth at xhat (|xhat| = {:e})", sol.xhat.norm());
                let mut trace = finish(
                    bundle,
                    records,
                    TerminationTag::NonsmoothPoint,
                    detail,
                    measured,
                    self.calls,
                );
                trace.final_trial = Some(eval);
                return Ok(trace);
            }
            best = best.min(eval.sample.value);
            let xhat_region = eval.region.clone();
            let (next, replaced) = match replace_reference(&bundle, eval) {
                Ok(r) => r,
                Err(Error::DegenerateBundle(detail)) => {
                    return Ok(finish(
                        bundle,
                        records,
                        TerminationTag::Stalled,
                        detail,
                        measured,
                        self.calls,
                    ))
                }
                Err(e) => return Err(e),
            };
            records.push(IterationRecord {
                iteration,
                diameter,
                theta: mult.theta,
                best_value: best,
                lambda: mult.lambda,
                replaced,
                oracle_calls: self.calls,
                xhat: sol.xhat,
                eta,
                kkt_residual: sol.kkt_residual,
                xhat_region,
                replaced_region: bundle.regions()[replaced].clone(),
            });
            linear[replaced] = lin;
            bundle = next;
        }
        unreachable!("the loop only exits by returning")
    }
}

fn check_variant(config: &NewtonConfig, expected: Variant) -> Result<()> {
    if config.variant == expected {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "config variant {:?} does not match the {:?} driver",
            config.variant, expected
        )))
    }
}

/// Bundle Newton for a convex objective: affine and quadratic models both come from `f`.
pub fn run_convex<O: Oracle>(
    oracle: &O,
    initial: Bundle,
    config: &NewtonConfig,
) -> Result<ConvergenceTrace> {
    check_variant(config, Variant::Convex)?;
    Driver { objective: oracle, models: Models::Objective, config, calls: 0 }.run(initial)
}

/// Bundle Newton for `F = f + r`: affine models from `f`, everything else from `F`.
///
/// Both oracles are evaluated at the initial points; each pair of calls counts
/// as one objective evaluation in the trace.
pub fn run_sum<F: Oracle, R: Oracle>(
    oracle_f: &F,
    oracle_r: &R,
    initial: Bundle,
    config: &NewtonConfig,
) -> Result<ConvergenceTrace> {
    check_variant(config, Variant::Sum)?;
    if oracle_f.dim() != oracle_r.dim() {
        return Err(Error::InvalidInput("f and r have different dimensions".into()));
    }
    Driver {
        objective: oracle_f,
        models: Models::Component { f: oracle_f, r: oracle_r },
        config,
        calls: 0,
    }
    .run(initial)
}

/// Bundle Newton for a weakly convex objective with affine models of `F + (η/2)|·|²`.
pub fn run_weakly_convex<O: Oracle>(
    oracle: &O,
    initial: Bundle,
    config: &NewtonConfig,
) -> Result<ConvergenceTrace> {
    check_variant(config, Variant::WeaklyConvex)?;
    Driver { objective: oracle, models: Models::Shifted(config.eta), config, calls: 0 }.run(initial)
}

/// Oracle reporting `scale·I` as the Hessian everywhere.
pub struct IdentityHessian<O> {
    inner: O,
    scale: f64,
}

impl<O: Oracle> Oracle for IdentityHessian<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        let mut e = self.inner.evaluate(x);
        let n = e.sample.point.len();
        e.sample.hessian = DMatrix::identity(n, n) * self.scale;
        e
    }
}

/// Replaces Hessians by `scale·I`, giving a first-order variant of the method.
pub fn identity_hessian_wrapper<O: Oracle>(oracle: O, scale: f64) -> Result<IdentityHessian<O>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidInput(format!("scale must be positive, got {scale}")));
    }
    Ok(IdentityHessian { inner: oracle, scale })
}

#[cfg(test)]
mod tests;
