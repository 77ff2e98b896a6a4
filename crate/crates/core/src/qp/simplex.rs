//! Active-set minimization of a convex quadratic over the unit simplex.
//!
//! This is Wolfe's minimum-norm-point scheme written for a general objective:
//! a major step adds the vertex with the most negative partial derivative to
//! the support ("corral"), and minor steps minimize over the affine hull of the
//! support, backing up to the boundary whenever a weight would turn
//! nonpositive. Both the optimality measure and the dual of the proximal
//! cutting-plane step run through [`minimize_over_simplex`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::Svd;

/// Result of minimizing over the affine hull of a support set.
pub(crate) enum AffineStep {
    /// Weights (summing to one) of the affine minimizer, indexed like the support.
    Minimizer(DVector<f64>),
    /// The affine problem is degenerate: a zero-sum direction along which the
    /// objective does not increase.
    Direction(DVector<f64>),
}

pub(crate) trait SimplexObjective {
    fn size(&self) -> usize;
    /// Objective value at vertex `i`.
    fn vertex_value(&self, i: usize) -> f64;
    fn gradient(&self, weights: &DVector<f64>) -> DVector<f64>;
    fn affine_step(&self, support: &[usize]) -> Result<AffineStep>;
    /// Stopping tolerance on the duality gap, given the current weights, support
    /// and entering vertex.
    fn gap_tolerance(&self, weights: &DVector<f64>, support: &[usize], entering: usize) -> f64;
}

#[derive(Debug, Clone)]
pub(crate) struct SimplexSolution {
    pub weights: DVector<f64>,
    pub gap: f64,
    pub iterations: usize,
}

pub(crate) fn minimize_over_simplex<O: SimplexObjective>(
    objective: &O,
    max_iterations: usize,
) -> Result<SimplexSolution> {
    let m = objective.size();
    let mut start = 0;
    let mut best = f64::INFINITY;
    for i in 0..m {
        let v = objective.vertex_value(i);
        if v < best {
            best = v;
            start = i;
        }
    }
    let mut weights = DVector::zeros(m);
    weights[start] = 1.0;
    let mut support = vec![start];
    let mut gap = f64::INFINITY;

    for iteration in 0..max_iterations {
        let grad = objective.gradient(&weights);
        let (entering, lowest) = grad
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &g)| if g < acc.1 { (i, g) } else { acc });
        gap = weights.dot(&grad) - lowest;
        if gap <= objective.gap_tolerance(&weights, &support, entering) {
            return Ok(SimplexSolution {
                weights,
                gap: gap.max(0.0),
                iterations: iteration,
            });
        }
        if !support.contains(&entering) {
            support.push(entering);
        }
        let before = weights.clone();
        minor_cycle(objective, &mut weights, &mut support, &grad)?;
        if weights == before {
            // The entering vertex was dropped again: optimal to rounding.
            return Ok(SimplexSolution {
                weights,
                gap: gap.max(0.0),
                iterations: iteration + 1,
            });
        }
    }
    Err(Error::SolverFailure {
        iterations: max_iterations,
        gap,
        best: weights.iter().copied().collect(),
    })
}

fn minor_cycle<O: SimplexObjective>(
    objective: &O,
    weights: &mut DVector<f64>,
    support: &mut Vec<usize>,
    grad: &DVector<f64>,
) -> Result<()> {
    // Each pass either finishes or removes at least one support index.
    for _ in 0..=support.len() + 1 {
        let current = DVector::from_iterator(support.len(), support.iter().map(|&i| weights[i]));
        let (ratio, target) = match objective.affine_step(support)? {
            AffineStep::Minimizer(beta) => {
                if beta.iter().all(|&b| b > 0.0) {
                    for (slot, &i) in support.iter().enumerate() {
                        weights[i] = beta[slot];
                    }
                    return Ok(());
                }
                let step = &beta - &current;
                (ratio_test(&current, &step), step)
            }
            AffineStep::Direction(mut d) => {
                let slope: f64 = support.iter().zip(d.iter()).map(|(&i, &di)| grad[i] * di).sum();
                let scale = d.norm() * support.iter().map(|&i| grad[i].abs()).fold(0.0, f64::max);
                let flat = slope.abs() <= 1e-14 * scale;
                // On a flat direction keep the most recent vertex in play.
                let flip = if flat { d[d.len() - 1] < 0.0 } else { slope > 0.0 };
                if flip {
                    d = -d;
                }
                if d.iter().all(|&v| v >= 0.0) {
                    return Ok(());
                }
                (ratio_test(&current, &d), d)
            }
        };
        let (theta, blocking) = ratio;
        for (slot, &i) in support.iter().enumerate() {
            weights[i] = (current[slot] + theta * target[slot]).max(0.0);
        }
        weights[support[blocking]] = 0.0;
        support.retain(|&i| weights[i] > 0.0);
        let total: f64 = support.iter().map(|&i| weights[i]).sum();
        for &i in support.iter() {
            weights[i] /= total;
        }
    }
    Ok(())
}

/// Largest step in [0, 1] (or unbounded for directions) keeping weights nonnegative,
/// together with the slot that blocks.
fn ratio_test(current: &DVector<f64>, step: &DVector<f64>) -> (f64, usize) {
    let mut theta = f64::INFINITY;
    let mut blocking = 0;
    for i in 0..current.len() {
        if step[i] < 0.0 {
            let t = current[i] / -step[i];
            if t < theta {
                theta = t;
                blocking = i;
            }
        }
    }
    (theta.max(0.0), blocking)
}

/// `min |Σ α_i p_i|` over the simplex, solved by least squares on the points
/// themselves rather than through their Gram matrix.
pub(crate) struct MinNorm<'a> {
    pub points: &'a [DVector<f64>],
}

impl SimplexObjective for MinNorm<'_> {
    fn size(&self) -> usize {
        self.points.len()
    }

    fn vertex_value(&self, i: usize) -> f64 {
        self.points[i].norm_squared()
    }

    fn gradient(&self, weights: &DVector<f64>) -> DVector<f64> {
        let x = combine(self.points, weights);
        DVector::from_iterator(self.points.len(), self.points.iter().map(|p| p.dot(&x)))
    }

    fn affine_step(&self, support: &[usize]) -> Result<AffineStep> {
        let m = support.len();
        if m == 1 {
            return Ok(AffineStep::Minimizer(DVector::from_element(1, 1.0)));
        }
        let base = &self.points[support[0]];
        let n = base.len();
        let rows = n.max(m - 1);
        let mut diffs = DMatrix::zeros(rows, m - 1);
        for (col, &i) in support[1..].iter().enumerate() {
            let d = &self.points[i] - base;
            diffs.view_mut((0, col), (n, 1)).copy_from(&d);
        }
        let scale = support
            .iter()
            .map(|&i| self.points[i].norm())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let svd = Svd::new(&diffs)?;
        if svd.min() <= 1e-12 * scale {
            let c = svd.v_t.row(m - 2).transpose();
            return Ok(AffineStep::Direction(zero_sum_lift(&c)));
        }
        let mut rhs = DVector::zeros(rows);
        rhs.rows_mut(0, n).copy_from(&(-base));
        Ok(AffineStep::Minimizer(affine_lift(&svd.solve(&rhs, 0.0))))
    }

    fn gap_tolerance(&self, _: &DVector<f64>, _: &[usize], _: usize) -> f64 {
        let gmax = self.points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max);
        1e-12 * (1.0 + gmax)
    }
}

/// Dual of the proximal cutting-plane step:
/// `min (1/2ρ)|Σ α_s g_s|² − Σ α_s e_s` over the simplex.
pub(crate) struct ProxDual<'a> {
    pub gradients: &'a [DVector<f64>],
    pub offsets: &'a DVector<f64>,
    pub rho: f64,
}

impl SimplexObjective for ProxDual<'_> {
    fn size(&self) -> usize {
        self.gradients.len()
    }

    fn vertex_value(&self, i: usize) -> f64 {
        self.gradients[i].norm_squared() / (2.0 * self.rho) - self.offsets[i]
    }

    fn gradient(&self, weights: &DVector<f64>) -> DVector<f64> {
        let x = combine(self.gradients, weights);
        DVector::from_iterator(
            self.gradients.len(),
            self.gradients
                .iter()
                .zip(self.offsets.iter())
                .map(|(g, e)| g.dot(&x) / self.rho - e),
        )
    }

    fn affine_step(&self, support: &[usize]) -> Result<AffineStep> {
        let m = support.len();
        if m == 1 {
            return Ok(AffineStep::Minimizer(DVector::from_element(1, 1.0)));
        }
        // With β = e₁ + Σ c_j (e_j − e₁) and D = [g_j − g₁], the objective is
        // |g₁ + Dc|²/2ρ − Σ β_s e_s, minimized by DᵀD c = ρΔe − Dᵀg₁. Working with
        // D instead of the bordered Gram system keeps gradients of very
        // different sizes from masquerading as a degeneracy.
        let base = &self.gradients[support[0]];
        let n = base.len();
        let rows = n.max(m - 1);
        let mut diffs = DMatrix::zeros(rows, m - 1);
        let mut de = DVector::zeros(m - 1);
        for (col, &i) in support[1..].iter().enumerate() {
            let d = &self.gradients[i] - base;
            diffs.view_mut((0, col), (n, 1)).copy_from(&d);
            de[col] = self.offsets[i] - self.offsets[support[0]];
        }
        let scale = support
            .iter()
            .map(|&i| self.gradients[i].norm())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let svd = Svd::new(&diffs)?;
        if svd.min() <= 1e-12 * scale {
            let c = svd.v_t.row(m - 2).transpose();
            return Ok(AffineStep::Direction(zero_sum_lift(&c)));
        }
        let mut g1 = DVector::zeros(rows);
        g1.rows_mut(0, n).copy_from(base);
        // c = V Σ⁻² Vᵀ ρΔe − V Σ⁻¹ Uᵀ g₁
        let s = &svd.singular_values;
        let mut coef = svd.v_t.clone() * (de * self.rho);
        for (v, &sv) in coef.iter_mut().zip(s.iter()) {
            *v /= sv * sv;
        }
        let mut proj = svd.u.tr_mul(&g1);
        for (v, &sv) in proj.iter_mut().zip(s.iter()) {
            *v /= sv;
        }
        let c = svd.v_t.tr_mul(&(coef - proj));
        Ok(AffineStep::Minimizer(affine_lift(&c)))
    }

    // Scaled by the terms of the partial derivatives that decide the gap. Cuts
    // far from the center carry huge gradients that must not loosen the test.
    fn gap_tolerance(&self, weights: &DVector<f64>, support: &[usize], entering: usize) -> f64 {
        let x = combine(self.gradients, weights);
        let scale = support
            .iter()
            .chain(std::iter::once(&entering))
            .map(|&i| self.gradients[i].norm() * x.norm() / self.rho + self.offsets[i].abs())
            .fold(0.0, f64::max);
        1e-12 * (1.0 + scale)
    }
}

pub(crate) fn combine(points: &[DVector<f64>], weights: &DVector<f64>) -> DVector<f64> {
    let n = points.first().map_or(0, |p| p.len());
    let mut x = DVector::zeros(n);
    for (p, &w) in points.iter().zip(weights.iter()) {
        if w != 0.0 {
            x.axpy(w, p, 1.0);
        }
    }
    x
}

fn affine_lift(c: &DVector<f64>) -> DVector<f64> {
    let mut beta = DVector::zeros(c.len() + 1);
    beta[0] = 1.0 - c.sum();
    beta.rows_mut(1, c.len()).copy_from(c);
    beta
}

fn zero_sum_lift(c: &DVector<f64>) -> DVector<f64> {
    let mut d = DVector::zeros(c.len() + 1);
    d[0] = -c.sum();
    d.rows_mut(1, c.len()).copy_from(c);
    d
}

