use nalgebra::{DMatrix, DVector};

use crate::bundle::coincide;
use crate::error::{Error, Result};
use crate::linalg::{singular_values, sorted_eigen, Svd};
use crate::oracle::OracleSample;

/// Affine function `x ↦ value + gradientᵀ(x − anchor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub anchor: DVector<f64>,
}

impl LinearModel {
    pub fn new(value: f64, gradient: DVector<f64>, anchor: DVector<f64>) -> Self {
        Self { value, gradient, anchor }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.value + self.gradient.dot(&(x - &self.anchor))
    }

    /// Constant term when written as `offset + gradientᵀx`.
    pub fn offset(&self) -> f64 {
        self.value - self.gradient.dot(&self.anchor)
    }
}

/// Quadratic `x ↦ value + gradientᵀ(x − a) + ½(x − a)ᵀ hessian (x − a)` with `a = anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub anchor: DVector<f64>,
}

impl QuadraticModel {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.anchor;
        self.value + self.gradient.dot(&d) + 0.5 * d.dot(&(&self.hessian * &d))
    }

    pub fn grad_at(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gradient + &self.hessian * (x - &self.anchor)
    }
}

impl From<&OracleSample> for LinearModel {
    fn from(s: &OracleSample) -> Self {
        LinearModel::new(s.value, s.gradient.clone(), s.point.clone())
    }
}

impl From<&OracleSample> for QuadraticModel {
    fn from(s: &OracleSample) -> Self {
        QuadraticModel {
            value: s.value,
            gradient: s.gradient.clone(),
            hessian: s.hessian.clone(),
            anchor: s.point.clone(),
        }
    }
}

/// `min Σ λ_s q_s(x)` subject to `l_s(x) = t` for every bundle element.
#[derive(Debug, Clone)]
pub struct NewtonSubproblem {
    pub lambdas: DVector<f64>,
    pub linear_models: Vec<LinearModel>,
    pub quadratic_models: Vec<QuadraticModel>,
}

impl NewtonSubproblem {
    pub fn new(
        lambdas: DVector<f64>,
        linear_models: Vec<LinearModel>,
        quadratic_models: Vec<QuadraticModel>,
    ) -> Result<Self> {
        let k = lambdas.len();
        if k == 0 || linear_models.len() != k || quadratic_models.len() != k {
            return Err(Error::InvalidInput(format!(
                "subproblem needs matching lengths, got λ {k}, l {}, q {}",
                linear_models.len(),
                quadratic_models.len()
            )));
        }
        let n = linear_models[0].gradient.len();
        let shapes_ok = linear_models
            .iter()
            .all(|l| l.gradient.len() == n && l.anchor.len() == n)
            && quadratic_models.iter().all(|q| {
                q.gradient.len() == n && q.anchor.len() == n && q.hessian.shape() == (n, n)
            });
        if !shapes_ok {
            return Err(Error::InvalidInput("subproblem dimensions disagree".into()));
        }
        if lambdas.iter().any(|&v| !(v >= -1e-12)) || (lambdas.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput("multipliers are not in the simplex".into()));
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if coincide(&linear_models[i].anchor, &linear_models[j].anchor) {
                    return Err(Error::DegenerateBundle(format!(
                        "anchors {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Self { lambdas, linear_models, quadratic_models })
    }

    /// The subproblem of the convex driver: both models built from the same samples.
    pub fn from_samples(lambdas: DVector<f64>, samples: &[OracleSample]) -> Result<Self> {
        Self::new(
            lambdas,
            samples.iter().map(LinearModel::from).collect(),
            samples.iter().map(QuadraticModel::from).collect(),
        )
    }

    pub fn k(&self) -> usize {
        self.lambdas.len()
    }

    pub fn dim(&self) -> usize {
        self.linear_models[0].gradient.len()
    }

    /// `Σ λ_s ∇²q_s`.
    pub fn weighted_hessian(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut w = DMatrix::zeros(n, n);
        for (q, &l) in self.quadratic_models.iter().zip(self.lambdas.iter()) {
            w += &q.hessian * l;
        }
        w
    }

    /// Objective `Σ λ_s q_s(x)`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.quadratic_models
            .iter()
            .zip(self.lambdas.iter())
            .map(|(q, &l)| l * q.eval(x))
            .sum()
    }

    /// Largest input magnitude, used to scale tolerances.
    pub fn magnitude(&self) -> f64 {
        let mut m = 0.0_f64;
        for l in &self.linear_models {
            m = m.max(l.value.abs()).max(l.gradient.amax()).max(l.anchor.amax());
        }
        for q in &self.quadratic_models {
            m = m.max(q.value.abs()).max(q.gradient.amax()).max(q.hessian.amax());
        }
        m
    }

    /// Residual of the optimality conditions at `(x, t, μ)`:
    /// `Σλ_s ∇q_s(x) − Σλ_s ∇l_s + Σμ_s ∇l_s = 0`, `Σμ = 1`, `l_s(x) = t`.
    pub fn kkt_residual(&self, x: &DVector<f64>, t: f64, mu: &DVector<f64>) -> f64 {
        let mut stationarity = DVector::zeros(self.dim());
        for ((q, l), (&lam, &m)) in self
            .quadratic_models
            .iter()
            .zip(&self.linear_models)
            .zip(self.lambdas.iter().zip(mu.iter()))
        {
            stationarity += q.grad_at(x) * lam;
            stationarity += &l.gradient * (m - lam);
        }
        let feasibility = self
            .linear_models
            .iter()
            .map(|l| (l.eval(x) - t).abs())
            .fold(0.0, f64::max);
        stationarity.amax().max(feasibility).max((mu.sum() - 1.0).abs())
    }
}

/// The active subspace written as `{x : Gx = b} = p + Range(U)`.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    /// `(k−1)×n`, rows `∇l_1 − ∇l_j`.
    pub constraint_matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// `n×(n−k+1)` orthonormal basis of the null space of G.
    pub null_basis: DMatrix<f64>,
    /// `n×(k−1)` orthonormal basis of the range of Gᵀ.
    pub range_basis: DMatrix<f64>,
    /// Particular solution `V (G V)⁻¹ b`.
    pub particular: DVector<f64>,
}

impl ReducedSystem {
    /// Orthogonal projection of `x` onto the active subspace.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let u = &self.null_basis;
        &self.particular + u * (u.transpose() * (x - &self.particular))
    }
}

/// Equality constraints of the subproblem and bases for their null and range spaces.
pub fn build_constraints(sub: &NewtonSubproblem) -> Result<ReducedSystem> {
    let (n, k) = (sub.dim(), sub.k());
    if k == 1 {
        return Ok(ReducedSystem {
            constraint_matrix: DMatrix::zeros(0, n),
            rhs: DVector::zeros(0),
            null_basis: DMatrix::identity(n, n),
            range_basis: DMatrix::zeros(n, 0),
            particular: DVector::zeros(n),
        });
    }
    let first = &sub.linear_models[0];
    let g = DMatrix::from_fn(k - 1, n, |r, c| {
        first.gradient[c] - sub.linear_models[r + 1].gradient[c]
    });
    let b = DVector::from_fn(k - 1, |r, _| sub.linear_models[r + 1].offset() - first.offset());

    let sv = singular_values(&g)?;
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = if k - 1 > n { 0.0 } else { sv.last().copied().unwrap_or(0.0) };
    if smax == 0.0 || smin < 1e-10 * smax {
        return Err(Error::DegenerateConstraints {
            ratio: if smax == 0.0 { 0.0 } else { smin / smax },
        });
    }

    // Householder QR of Gᵀ; applying Qᵀ to the identity recovers the full Q.
    let qr = g.transpose().col_piv_qr();
    let mut q_t = DMatrix::<f64>::identity(n, n);
    qr.q_tr_mul(&mut q_t);
    let q = q_t.transpose();
    let range_basis = q.columns(0, k - 1).into_owned();
    let null_basis = q.columns(k - 1, n - (k - 1)).into_owned();

    let gv = &g * &range_basis;
    let coeffs = gv
        .lu()
        .solve(&b)
        .ok_or(Error::DegenerateConstraints { ratio: smin / smax })?;
    let particular = &range_basis * coeffs;

    Ok(ReducedSystem {
        constraint_matrix: g,
        rhs: b,
        null_basis,
        range_basis,
        particular,
    })
}

/// Output of either subproblem solver.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub xhat: DVector<f64>,
    /// Common value of the linear models at `xhat`.
    pub t_value: f64,
    pub mu: DVector<f64>,
    pub kkt_residual: f64,
    pub bounded: bool,
    /// Smallest eigenvalue of `Σ λ_s Uᵀ∇²q_s U` (`+∞` when the subspace is a point).
    pub reduced_hessian_min_eig: f64,
}

fn unbounded_threshold(sub: &NewtonSubproblem) -> f64 {
    let scale = sub
        .quadratic_models
        .iter()
        .zip(sub.lambdas.iter())
        .map(|(q, &l)| (q.hessian.norm() * l).abs())
        .fold(0.0, f64::max);
    -1e-10 * (1.0 + scale)
}

fn reduced_hessian(sub: &NewtonSubproblem, u: &DMatrix<f64>) -> DMatrix<f64> {
    let r = u.ncols();
    let mut h = DMatrix::zeros(r, r);
    for (q, &l) in sub.quadratic_models.iter().zip(sub.lambdas.iter()) {
        if l != 0.0 {
            h += (u.transpose() * &q.hessian * u) * l;
        }
    }
    0.5 * (&h + h.transpose())
}

/// Solves the full KKT system in `(x, t, μ)`:
///
/// ```text
/// Σλ_s ∇²q_s x + Σμ_s ∇l_s = Σλ_s ∇²q_s a_s − Σλ_s (∇q_s(a_s) − ∇l_s)
/// ∇l_sᵀ x − t            = ∇l_sᵀ s − l_s(s)           for each s
/// Σμ_s                   = 1
/// ```
///
/// With `q_s` and `l_s` sharing a gradient this is exactly the textbook system
/// `Σλ_s ∇²f(s)(x − s) + Σμ_s ∇f(s) = 0`.
pub fn solve_kkt_full(sub: &NewtonSubproblem) -> Result<SubproblemSolution> {
    let (n, k) = (sub.dim(), sub.k());
    let size = n + 1 + k;
    let mut m = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);

    let w = sub.weighted_hessian();
    m.view_mut((0, 0), (n, n)).copy_from(&w);
    let mut top = DVector::zeros(n);
    for (s, ((q, l), &lam)) in sub
        .quadratic_models
        .iter()
        .zip(&sub.linear_models)
        .zip(sub.lambdas.iter())
        .enumerate()
    {
        top += (&q.hessian * &q.anchor - (&q.gradient - &l.gradient)) * lam;
        m.view_mut((0, n + 1 + s), (n, 1)).copy_from(&l.gradient);
        m.view_mut((n + s, 0), (1, n)).copy_from(&l.gradient.transpose());
        m[(n + s, n)] = -1.0;
        rhs[n + s] = -l.offset();
        m[(n + k, n + 1 + s)] = 1.0;
    }
    rhs.rows_mut(0, n).copy_from(&top);
    rhs[n + k] = 1.0;

    let svd = Svd::new(&m)?;
    let (smax, smin) = (svd.max(), svd.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e14 {
        return Err(Error::SingularSystem { condition });
    }
    let mut z = svd.solve(&rhs, 0.0);
    // One step of iterative refinement. The SVD error is relative to |z|, which
    // is dominated by μ; the constraint rows have accurate residuals, so the
    // refined x keeps its component across the active subspace to full
    // relative precision even when x is tiny.
    let residual = &rhs - &m * &z;
    z += svd.solve(&residual, 0.0);
    let xhat = z.rows(0, n).into_owned();
    let t_value = z[n];
    let mu = z.rows(n + 1, k).into_owned();

    let reduced_hessian_min_eig = if k == 1 {
        sorted_eigen(&w).0.last().copied().unwrap_or(f64::INFINITY)
    } else {
        let reduced = build_constraints(sub)?;
        if reduced.null_basis.ncols() == 0 {
            f64::INFINITY
        } else {
            let h = reduced_hessian(sub, &reduced.null_basis);
            sorted_eigen(&h).0.last().copied().unwrap_or(f64::INFINITY)
        }
    };
    let bounded = reduced_hessian_min_eig >= unbounded_threshold(sub);
    let kkt_residual = sub.kkt_residual(&xhat, t_value, &mu);
    Ok(SubproblemSolution {
        xhat,
        t_value,
        mu,
        kkt_residual,
        bounded,
        reduced_hessian_min_eig,
    })
}

/// Solves the subproblem on the null space of the constraints.
///
/// With `project_anchors` each quadratic is re-anchored at the projection of its
/// reference point onto the active subspace, which gives the system
/// `Σλ_s (UᵀH_sU) x_u = Σλ_s [(UᵀH_sU) Uᵀ(s − p) − Uᵀ∇q_s(s)]` involving only
/// projected Hessians. Otherwise the reduced form of the original conditions is
/// solved. The returned residual refers to the system actually solved.
pub fn solve_kkt_reduced(
    sub: &NewtonSubproblem,
    reduced: &ReducedSystem,
    project_anchors: bool,
) -> Result<SubproblemSolution> {
    if sub.k() == 1 {
        return solve_kkt_full(sub);
    }
    let projected;
    let sub = if project_anchors {
        let mut modified = sub.clone();
        for q in &mut modified.quadratic_models {
            q.anchor = reduced.project(&q.anchor);
        }
        projected = modified;
        &projected
    } else {
        sub
    };

    let u = &reduced.null_basis;
    let p = &reduced.particular;
    let r = u.ncols();
    let (xhat, min_eig) = if r == 0 {
        (p.clone(), f64::INFINITY)
    } else {
        let h = reduced_hessian(sub, u);
        let mut rhs = DVector::zeros(r);
        for (q, &l) in sub.quadratic_models.iter().zip(sub.lambdas.iter()) {
            if l != 0.0 {
                rhs += (u.transpose() * (&q.hessian * (&q.anchor - p) - &q.gradient)) * l;
            }
        }
        let (values, vectors) = sorted_eigen(&h);
        let min_eig = *values.last().expect("nonempty");
        if min_eig < unbounded_threshold(sub) {
            return Err(Error::UnboundedSubproblem { min_eigenvalue: min_eig });
        }
        let max_abs = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if min_eig <= 1e-14 * max_abs || max_abs == 0.0 {
            return Err(Error::SingularSystem {
                condition: if min_eig > 0.0 { max_abs / min_eig } else { f64::INFINITY },
            });
        }
        // x_u = V diag(1/values) Vᵀ rhs
        let coords = vectors.transpose() * rhs;
        let scaled = DVector::from_iterator(r, coords.iter().zip(&values).map(|(c, v)| c / v));
        let xu = vectors * scaled;
        (u * xu + p, min_eig)
    };

    let (t_value, mu) = recover_multipliers(sub, &xhat)?;
    let kkt_residual = sub.kkt_residual(&xhat, t_value, &mu);
    Ok(SubproblemSolution {
        xhat,
        t_value,
        mu,
        kkt_residual,
        bounded: true,
        reduced_hessian_min_eig: min_eig,
    })
}

/// Least-squares `μ` from the stationarity condition, plus the mean linear value as `t`.
fn recover_multipliers(sub: &NewtonSubproblem, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let (n, k) = (sub.dim(), sub.k());
    let t = sub.linear_models.iter().map(|l| l.eval(x)).sum::<f64>() / k as f64;
    let mut a = DMatrix::zeros(n + 1, k);
    let mut rhs = DVector::zeros(n + 1);
    let mut target = DVector::zeros(n);
    for (s, ((q, l), &lam)) in sub
        .quadratic_models
        .iter()
        .zip(&sub.linear_models)
        .zip(sub.lambdas.iter())
        .enumerate()
    {
        target -= (q.grad_at(x) - &l.gradient) * lam;
        a.view_mut((0, s), (n, 1)).copy_from(&l.gradient);
        a[(n, s)] = 1.0;
    }
    rhs.rows_mut(0, n).copy_from(&target);
    rhs[n] = 1.0;
    let svd = Svd::new(&a)?;
    let mu = svd.solve(&rhs, 1e-14 * svd.max());
    Ok((t, mu))
}
