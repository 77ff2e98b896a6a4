//! Phase one followed by bundle Newton, with CSV traces and trial summaries.
//!
//! A trace has one row per phase-one iteration and one row per Newton
//! iteration, followed by a final Newton row carrying the termination tag.
//! Columns:
//!
//! | column | meaning |
//! |---|---|
//! | `phase` | `phase1` or `newton` |
//! | `iteration` | iteration index within the phase; the final Newton row holds the iteration count |
//! | `oracle_calls` | oracle evaluations made by the whole pipeline when the row was written |
//! | `best_f` | smallest objective value evaluated so far |
//! | `theta` | optimality measure of the bundle the Newton iteration started from; empty in phase one |
//! | `diam` | diameter of that bundle; empty in phase one |
//! | `termination` | empty except on the last row of each phase |
//! | `schema_version` | [`TRACE_SCHEMA_VERSION`] |
//!
//! Floats are written in scientific notation with 17 significant digits, so a
//! rerun with the same configuration reproduces the file byte for byte.

use std::io;

use nalgebra::DVector;
use serde::Serialize;

use crate::bundle::Bundle;
use crate::error::{Error, Result};
use crate::linalg::sorted_eigen;
use crate::newton::{
    run_convex, run_weakly_convex, ConvergenceTrace, Eta, NewtonConfig, SubproblemPath, Variant,
};
use crate::oracle::{check_finite, CountingOracle, Evaluation, Oracle};
use crate::phase1::{
    estimate_bundle_size, run_bundle_method, run_nonsmooth_bfgs, select_initial_bundle, BfgsConfig,
    BfgsStop, BundleMethodConfig, CandidateSet, DEFAULT_RANK_TOLERANCE,
};
use crate::problems::{Family, MaxEigProblem};

/// Version of the trace and summary CSV layouts.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Threshold used by [`TrialSummary`] for the calls-to-accuracy columns.
pub const SUMMARY_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase1Method {
    BundleMethod,
    Bfgs,
}

impl Phase1Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase1Method::BundleMethod => "bundle-method",
            Phase1Method::Bfgs => "bfgs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub phase1: Phase1Method,
    pub bundle_method: BundleMethodConfig,
    pub bfgs: BfgsConfig,
    /// Relative singular value cutoff for the bundle-size estimate.
    pub rank_tolerance: f64,
    /// Fixed bundle size; `None` estimates it from the phase-one candidates.
    pub bundle_size: Option<usize>,
    pub newton: NewtonConfig,
    /// Starting point; `None` means `(1, …, 1)`.
    pub start: Option<DVector<f64>>,
}

impl PipelineConfig {
    /// Defaults per family: convex families run the bundle method
    /// (ρ = 1, β = 1e-5, ε̄ = 1e-6) and the convex driver; euc-sum runs BFGS
    /// until breakdown and the weakly convex driver with dynamic η. Max-eig
    /// solves the projected reduced system.
    pub fn for_family(family: Family) -> Self {
        let newton = NewtonConfig {
            epsilon_bar: 1e-12,
            delta_bar: 1e-12,
            max_iterations: 500,
            ..NewtonConfig::default()
        };
        let (phase1, newton) = if family == Family::MaxEig {
            // λ_max is partly smooth: its Hessians blow up across the manifold of
            // multiple eigenvalues, and the projected reduced system avoids them.
            let path = SubproblemPath::Reduced { project_anchors: true };
            (Phase1Method::BundleMethod, NewtonConfig { path, ..newton })
        } else if family.is_convex() {
            (Phase1Method::BundleMethod, newton)
        } else {
            (
                Phase1Method::Bfgs,
                NewtonConfig { variant: Variant::WeaklyConvex, eta: Eta::Dynamic, ..newton },
            )
        };
        Self {
            phase1,
            bundle_method: BundleMethodConfig::default(),
            bfgs: BfgsConfig::default(),
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            bundle_size: None,
            newton,
            start: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.bundle_method.validate()?;
        self.bfgs.validate()?;
        self.newton.validate()?;
        if !(self.rank_tolerance > 0.0 && self.rank_tolerance < 1.0) {
            return Err(Error::InvalidInput(format!(
                "rank_tolerance must lie in (0, 1), got {}",
                self.rank_tolerance
            )));
        }
        if self.newton.variant == Variant::Sum {
            return Err(Error::InvalidInput(
                "the pipeline runs the convex or weakly convex driver; the sum driver needs \
                 separate oracles for the smooth and nonsmooth parts"
                    .into(),
            ));
        }
        if let Some(k) = self.bundle_size {
            check_bundle_bound(k, dim)?;
        }
        if let Some(start) = &self.start {
            if start.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "start has dimension {}, problem has {dim}",
                    start.len()
                )));
            }
            check_finite(start, "start point")?;
        }
        Ok(())
    }
}

/// Rejects bundle sizes outside `1 ≤ k ≤ n + 1`. A bundle needs no more points
/// than one plus the dimension of the subdifferential at the minimizer, and
/// that dimension is at most `n`.
pub fn check_bundle_bound(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n + 1 {
        return Err(Error::BundleTooLarge { k, bound: n + 1 });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Phase1,
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub phase: Phase,
    pub iteration: usize,
    pub oracle_calls: usize,
    #[serde(serialize_with = "sci")]
    pub best_f: f64,
    #[serde(serialize_with = "sci_opt")]
    pub theta: Option<f64>,
    #[serde(serialize_with = "sci_opt")]
    pub diam: Option<f64>,
    pub termination: String,
    pub schema_version: u32,
}

fn sci<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:.16e}"))
}

fn sci_opt<S: serde::Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => sci(v, s),
        None => s.serialize_str(""),
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub rows: Vec<TraceRow>,
    pub phase1_calls: usize,
    /// Phase-one center (bundle method) or best iterate (BFGS).
    pub handoff: Option<Evaluation>,
    pub candidates: Option<CandidateSet>,
    pub bundle_size: Option<usize>,
    pub initial_bundle: Option<Bundle>,
    pub newton: Option<ConvergenceTrace>,
    /// Why the pipeline stopped early, if it did.
    pub failure: Option<String>,
    /// Oracle calls counted by the wrapper around the problem.
    pub oracle_calls: usize,
}

impl PipelineResult {
    pub fn best_value(&self) -> f64 {
        self.rows.iter().map(|r| r.best_f).fold(f64::INFINITY, f64::min)
    }

    pub fn termination(&self) -> &str {
        self.rows.last().map_or("", |r| r.termination.as_str())
    }

    /// Final Newton row, which carries the last measured Θ and diameter.
    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last().filter(|r| r.phase == Phase::Newton)
    }

    /// Oracle calls at the first row whose field drops below `threshold`.
    pub fn calls_to(&self, threshold: f64, field: fn(&TraceRow) -> Option<f64>) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| field(r).is_some_and(|v| v < threshold))
            .map(|r| r.oracle_calls)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.rows)
    }
}

/// Writes any serializable rows as CSV with a header.
pub fn write_rows<W: io::Write, R: Serialize>(writer: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Runs phase one, estimates `k`, selects the initial bundle and runs the
/// configured Newton driver. Invalid configurations are errors. Numerical
/// breakdowns after that are recorded in [`PipelineResult::failure`] and in a
/// final `Failed: …` row.
pub fn run_pipeline<O: Oracle>(oracle: &O, config: &PipelineConfig) -> Result<PipelineResult> {
    let n = oracle.dim();
    config.validate(n)?;
    let counting = CountingOracle::new(oracle);
    let start = config.start.clone().unwrap_or_else(|| DVector::from_element(n, 1.0));

    let mut result = PipelineResult {
        rows: Vec::new(),
        phase1_calls: 0,
        handoff: None,
        candidates: None,
        bundle_size: None,
        initial_bundle: None,
        newton: None,
        failure: None,
        oracle_calls: 0,
    };
    if let Err(e) = run_stages(&counting, config, &start, &mut result) {
        let phase = result.rows.last().map_or(Phase::Phase1, |r| {
            if result.bundle_size.is_some() {
                Phase::Newton
            } else {
                r.phase
            }
        });
        let best_f = result.best_value();
        result.rows.push(TraceRow {
            phase,
            iteration: result.rows.iter().filter(|r| r.phase == phase).count(),
            oracle_calls: counting.calls(),
            best_f,
            theta: None,
            diam: None,
            termination: format!("Failed: {e}"),
            schema_version: TRACE_SCHEMA_VERSION,
        });
        result.failure = Some(e.to_string());
    }
    result.oracle_calls = counting.calls();
    Ok(result)
}

fn run_stages<O: Oracle>(
    oracle: &CountingOracle<O>,
    config: &PipelineConfig,
    start: &DVector<f64>,
    out: &mut PipelineResult,
) -> Result<()> {
    let row = |phase, iteration, oracle_calls, best_f, termination: &str| TraceRow {
        phase,
        iteration,
        oracle_calls,
        best_f,
        theta: None,
        diam: None,
        termination: termination.to_string(),
        schema_version: TRACE_SCHEMA_VERSION,
    };

    let (candidates, handoff) = match config.phase1 {
        Phase1Method::BundleMethod => {
            let bm = run_bundle_method(oracle, start, &config.bundle_method)?;
            let mut best = f64::INFINITY;
            for r in &bm.records {
                best = best.min(r.center_value).min(r.trial_value.unwrap_or(f64::INFINITY));
                out.rows.push(row(Phase::Phase1, r.iteration, r.oracle_calls, best, ""));
            }
            let tag = if bm.truncated { "IterationCap" } else { "GapBelowTolerance" };
            if let Some(last) = out.rows.last_mut() {
                last.termination = tag.into();
            }
            out.phase1_calls = bm.oracle_calls;
            (bm.candidates, bm.center)
        }
        Phase1Method::Bfgs => {
            let bf = run_nonsmooth_bfgs(oracle, start, &config.bfgs)?;
            for r in &bf.records {
                out.rows.push(row(Phase::Phase1, r.iteration, r.oracle_calls, r.best_value, ""));
            }
            let tag = match bf.stop {
                BfgsStop::IterationCap => "IterationCap",
                BfgsStop::Breakdown => "Breakdown",
            };
            if let Some(last) = out.rows.last_mut() {
                last.termination = tag.into();
            }
            out.phase1_calls = bf.oracle_calls;
            (bf.candidates, bf.best)
        }
    };
    debug_assert_eq!(out.phase1_calls, oracle.calls());
    out.handoff = Some(handoff);
    out.candidates = Some(candidates.clone());

    let k = match config.bundle_size {
        Some(k) => k,
        None => estimate_bundle_size(&candidates, config.rank_tolerance)?,
    };
    check_bundle_bound(k, oracle.dim())?;
    out.bundle_size = Some(k);
    let bundle = select_initial_bundle(&candidates, k)?;
    out.initial_bundle = Some(bundle.clone());

    let trace = match config.newton.variant {
        Variant::WeaklyConvex => run_weakly_convex(oracle, bundle, &config.newton)?,
        _ => run_convex(oracle, bundle, &config.newton)?,
    };
    let offset = out.phase1_calls;
    let mut best = out.best_value().min(out.initial_bundle.as_ref().map_or(f64::INFINITY, Bundle::best_value));
    for r in &trace.records {
        best = best.min(r.best_value);
        out.rows.push(TraceRow {
            phase: Phase::Newton,
            iteration: r.iteration,
            oracle_calls: offset + r.oracle_calls,
            best_f: best,
            theta: Some(r.theta),
            diam: Some(r.diameter),
            termination: String::new(),
            schema_version: TRACE_SCHEMA_VERSION,
        });
    }
    out.rows.push(TraceRow {
        phase: Phase::Newton,
        iteration: trace.iterations(),
        oracle_calls: offset + trace.oracle_calls,
        best_f: best.min(trace.best_value()),
        theta: trace.final_theta,
        diam: Some(trace.final_diameter),
        termination: trace.termination.tag.to_string(),
        schema_version: TRACE_SCHEMA_VERSION,
    });
    out.newton = Some(trace);
    Ok(())
}

/// One row of the aggregate produced by a batch of trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub family: String,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub phase1: String,
    pub bundle_size: Option<usize>,
    pub phase1_calls: usize,
    pub oracle_calls: usize,
    #[serde(serialize_with = "sci")]
    pub best_f: f64,
    #[serde(serialize_with = "sci_opt")]
    pub final_theta: Option<f64>,
    #[serde(serialize_with = "sci_opt")]
    pub final_diam: Option<f64>,
    pub termination: String,
    /// Oracle calls at the first Newton row with Θ below [`SUMMARY_THRESHOLD`].
    pub calls_to_theta: Option<usize>,
    /// Oracle calls at the first Newton row with diameter below [`SUMMARY_THRESHOLD`].
    pub calls_to_diam: Option<usize>,
    pub error: String,
    pub schema_version: u32,
}

/// Identifies a trial in its summary row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialLabel {
    pub family: Family,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub seed: u64,
}

impl TrialSummary {
    pub fn from_result(label: TrialLabel, config: &PipelineConfig, result: &PipelineResult) -> Self {
        let last = result.final_row();
        Self {
            family: label.family.to_string(),
            n: label.n,
            k: label.k,
            m: label.m,
            seed: label.seed,
            phase1: config.phase1.as_str().into(),
            bundle_size: result.bundle_size,
            phase1_calls: result.phase1_calls,
            oracle_calls: result.oracle_calls,
            best_f: result.best_value(),
            final_theta: last.and_then(|r| r.theta),
            final_diam: last.and_then(|r| r.diam),
            termination: result.termination().into(),
            calls_to_theta: result.calls_to(SUMMARY_THRESHOLD, |r| r.theta),
            calls_to_diam: result.calls_to(SUMMARY_THRESHOLD, |r| r.diam),
            error: result.failure.clone().unwrap_or_default(),
            schema_version: TRACE_SCHEMA_VERSION,
        }
    }

    /// Summary of a trial that could not run at all, e.g. a generation failure.
    pub fn from_error(label: TrialLabel, config: &PipelineConfig, error: &Error) -> Self {
        Self {
            family: label.family.to_string(),
            n: label.n,
            k: label.k,
            m: label.m,
            seed: label.seed,
            phase1: config.phase1.as_str().into(),
            bundle_size: None,
            phase1_calls: 0,
            oracle_calls: 0,
            best_f: f64::NAN,
            final_theta: None,
            final_diam: None,
            termination: "Failed".into(),
            calls_to_theta: None,
            calls_to_diam: None,
            error: error.to_string(),
            schema_version: TRACE_SCHEMA_VERSION,
        }
    }
}

/// Multiplicity of the top eigenvalue: eigenvalues within `rel_tol·(1 + |λ₁|)` of `λ₁`.
pub fn top_multiplicity(eigenvalues: &[f64], rel_tol: f64) -> usize {
    let Some(&top) = eigenvalues.first() else {
        return 0;
    };
    eigenvalues.iter().take_while(|&&l| top - l <= rel_tol * (1.0 + top.abs())).count()
}

/// Records a reference value for a max-eig problem: the best value found by
/// running the default pipeline from `(1, …, 1)` and from `extra_starts`
/// standard normal starts drawn from `seed`. The multiplicity is counted at
/// the best point with relative tolerance 1e-6.
pub fn record_max_eig_reference(
    problem: &mut MaxEigProblem,
    extra_starts: usize,
    seed: u64,
) -> Result<()> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    let n = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![DVector::from_element(n, 1.0)];
    for _ in 0..extra_starts {
        starts.push(DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for start in starts {
        let config = PipelineConfig { start: Some(start), ..PipelineConfig::for_family(Family::MaxEig) };
        let result = run_pipeline(&*problem, &config)?;
        let mut points: Vec<(f64, DVector<f64>)> = Vec::new();
        if let Some(h) = &result.handoff {
            points.push((h.sample.value, h.sample.point.clone()));
        }
        if let Some(t) = &result.newton {
            for s in t.bundle.samples() {
                points.push((s.value, s.point.clone()));
            }
        }
        for (v, x) in points {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, x));
            }
        }
    }
    let (value, x) = best.ok_or_else(|| Error::GenerationFailure("no multistart run finished".into()))?;
    let (eigenvalues, _) = sorted_eigen(&problem.matrix_at(&x));
    problem.reference_value = Some(value);
    problem.multiplicity = Some(top_multiplicity(&eigenvalues, 1e-6));
    Ok(())
}
