//! Local nonsmooth minimization with the k-bundle Newton method.
//!
//! The method keeps a bundle of `k` reference points, each carrying the value,
//! gradient and Hessian returned by a black-box [`Oracle`]. Every iteration
//! computes the minimum-norm element of the convex hull of the bundle
//! gradients, solves an equality-constrained quadratic subproblem on the
//! active subspace where all the bundle linearizations agree, and swaps the
//! new point into the bundle. On max functions with the right `k` the bundle
//! shrinks to the minimizer at a `k`-step quadratic rate.
//!
//! Crate layout:
//!
//! - [`bundle`]: the bundle, the optimality measure, affine-independence
//!   diagnostics, the replacement rule and the optimality certificate.
//! - [`qp`]: the Newton subproblem (full KKT and reduced null-space solves),
//!   the proximal cutting-plane QP and the simplex QP kernel both rely on.
//! - [`newton`]: the three driver loops (convex, smooth-plus-nonsmooth sums,
//!   weakly convex).
//! - [`phase1`]: warm starts: a multiple-cut proximal bundle method, a
//!   nonsmooth BFGS, bundle-size estimation and initial-bundle selection.
//! - [`problems`]: seeded test families (max of quartics, sum of absolute
//!   values, maximum eigenvalue) with exact derivatives and a JSON schema.
//! - [`pipeline`]: phase one followed by bundle Newton, CSV traces and
//!   per-trial summaries.

// Negated float comparisons such as `!(x > 0.0)` reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod error;
pub mod linalg;
pub mod newton;
pub mod oracle;
pub mod phase1;
pub mod pipeline;
pub mod problems;
pub mod qp;

pub use bundle::{
    optimality_certificate, replace_reference, sigma_check, theta, Bundle, Certificate,
    MultiplierEstimate,
};
pub use error::{Error, Result};
pub use newton::{
    identity_hessian_wrapper, run_convex, run_sum, run_weakly_convex, ConvergenceTrace, Eta,
    IdentityHessian, IterationRecord, NewtonConfig, SubproblemPath, TerminationReason,
    TerminationTag, Variant,
};
pub use phase1::{
    estimate_bundle_size, run_bundle_method, run_nonsmooth_bfgs, select_initial_bundle, BfgsConfig,
    BfgsRecord, BfgsResult, BfgsStop, BundleMethodConfig, BundleMethodRecord, BundleMethodResult,
    CandidateSet, CandidateSource,
};
pub use oracle::{CountingOracle, Evaluation, FnOracle, Oracle, OracleSample, Region};
pub use problems::{EucSumProblem, Family, MaxEigProblem, MaxQuartProblem, Problem, QuarticPieces};
pub use qp::{
    build_constraints, solve_kkt_full, solve_kkt_reduced, solve_proximal_cut_qp, LinearModel,
    NewtonSubproblem, ProxStep, QuadraticModel, ReducedSystem, SubproblemSolution,
};

/// Re-exported so downstream crates can build points without naming nalgebra.
pub use nalgebra::{DMatrix, DVector};
