//! Quadratic subproblems.
//!
//! The Newton subproblem minimizes `Σ λ_s q_s(x)` over the active subspace
//! `{x : l_s(x) equal for all s}`. [`solve_kkt_full`] solves its optimality
//! conditions as one square system in `(x, t, μ)`; [`solve_kkt_reduced`]
//! eliminates the constraints with an orthonormal null-space basis and only
//! touches projected Hessians, which stay well conditioned on partly smooth
//! problems where the full Hessians do not.

mod kkt;
mod prox;
pub(crate) mod simplex;

pub use kkt::{
    build_constraints, solve_kkt_full, solve_kkt_reduced, LinearModel, NewtonSubproblem,
    QuadraticModel, ReducedSystem, SubproblemSolution,
};
pub use prox::{solve_proximal_cut_qp, ProxStep};
