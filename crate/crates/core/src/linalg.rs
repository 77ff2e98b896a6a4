//! Small dense helpers shared across modules.
//!
//! Singular value and symmetric eigenvalue decompositions go through faer.
//! nalgebra's SVD returns wrong factors for some small well-conditioned inputs
//! (reconstruction error near 1e-1 on a 4×4 KKT matrix met in practice), so it
//! is not used anywhere in the crate.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl Svd {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (r, c) = a.shape();
        let p = r.min(c);
        if p == 0 {
            return Ok(Self {
                u: DMatrix::zeros(r, 0),
                singular_values: DVector::zeros(0),
                v_t: DMatrix::zeros(0, c),
            });
        }
        let svd = to_faer(a)
            .thin_svd()
            .map_err(|e| Error::Factorization(format!("SVD: {e:?}")))?;
        let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
        Ok(Self {
            u: DMatrix::from_fn(r, p, |i, j| u[(i, order[j])]),
            singular_values: DVector::from_fn(p, |j, _| s[order[j]]),
            v_t: DMatrix::from_fn(p, c, |i, j| v[(j, order[i])]),
        })
    }

    pub fn max(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Pseudo-inverse solve, dropping singular values `<= cutoff`.
    pub fn solve(&self, rhs: &DVector<f64>, cutoff: f64) -> DVector<f64> {
        let mut coef = self.u.tr_mul(rhs);
        for (c, &s) in coef.iter_mut().zip(self.singular_values.iter()) {
            *c = if s > cutoff { *c / s } else { 0.0 };
        }
        self.v_t.tr_mul(&coef)
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(Svd::new(m)?.singular_values.iter().copied().collect())
}

/// The (n+1)×k matrix with columns `(g_i; row)`.
pub fn lifted_columns(gradients: &[DVector<f64>], row: f64) -> DMatrix<f64> {
    let n = gradients.first().map_or(0, |g| g.len());
    DMatrix::from_fn(n + 1, gradients.len(), |i, j| {
        if i < n {
            gradients[j][i]
        } else {
            row
        }
    })
}

/// Eigenvalues of a symmetric matrix in descending order, with matching eigenvectors
/// as columns. Only the lower triangle is read. If the iteration fails to converge
/// the entries are NaN, which sample validation downstream rejects.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let Ok(eig) = to_faer(m).self_adjoint_eigen(Side::Lower) else {
        return (vec![f64::NAN; n], DMatrix::from_element(n, n, f64::NAN));
    };
    let (u, s) = (eig.U(), eig.S().column_vector());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let values = order.iter().map(|&i| s[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| u[(r, order[c])]);
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sorted_eigen(m).0.last().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sorted_eigen(m).0.first().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Ratio of largest to smallest eigenvalue magnitude of a symmetric matrix.
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = sorted_eigen(m)
        .0
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Orthonormal basis of the null space of `a` (columns), by SVD of `a` padded square.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let (r, c) = a.shape();
    if c == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = Svd::new(&padded)?;
    let cut = rel_tol * svd.max().max(f64::MIN_POSITIVE);
    let idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= cut)
        .collect();
    Ok(DMatrix::from_fn(c, idx.len(), |i, j| svd.v_t[(idx[j], i)]))
}

/// Distance-based diameter of a point set.
pub fn diameter<'a>(points: impl IntoIterator<Item = &'a DVector<f64>> + Clone) -> f64 {
    let pts: Vec<&DVector<f64>> = points.into_iter().collect();
    let mut d = 0.0_f64;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            d = d.max((pts[i] - pts[j]).norm());
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A symmetric 4×4 simplex KKT matrix on which nalgebra's SVD returns wrong factors.
    fn kkt_matrix() -> DMatrix<f64> {
        let bits: [u64; 16] = [
            4609903786184748684, 13845427264453899018, 4610076661645865184, 4607182418800017408,
            13845427264453899018, 4634598949714208730, 13846361409308308096, 4607182418800017408,
            4610076661645865184, 13846361409308308096, 4613376518794759472, 4607182418800017408,
            4607182418800017408, 4607182418800017408, 4607182418800017408, 0,
        ];
        DMatrix::from_iterator(4, 4, bits.iter().map(|&b| f64::from_bits(b)))
    }

    #[test]
    fn svd_reconstructs_and_solves() {
        let a = kkt_matrix();
        let svd = Svd::new(&a).unwrap();
        let rebuilt = &svd.u * DMatrix::from_diagonal(&svd.singular_values) * &svd.v_t;
        assert!((rebuilt - &a).norm() < 1e-12);
        let rhs = DVector::from_vec(vec![0.0024714381753986195, -0.003972373754235202, -0.003972373754233127, 1.0]);
        let z = svd.solve(&rhs, 0.0);
        assert!((&a * z - rhs).norm() < 1e-13);
        // Eigenvalues from an independent route: the characteristic values match
        // the singular values up to sign for a symmetric matrix.
        let (values, _) = sorted_eigen(&a);
        let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        abs.sort_by(|x, y| y.total_cmp(x));
        for (s, e) in svd.singular_values.iter().zip(abs) {
            assert!((s - e).abs() < 1e-12 * svd.max());
        }
    }

    #[test]
    fn svd_shapes() {
        let wide = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let svd = Svd::new(&wide).unwrap();
        assert_eq!(svd.u.shape(), (2, 2));
        assert_eq!(svd.v_t.shape(), (2, 3));
        assert!(svd.singular_values[0] >= svd.singular_values[1]);
        let ns = null_space(&wide, 1e-12).unwrap();
        assert_eq!(ns.ncols(), 1);
        assert!((&wide * ns).norm() < 1e-12);
        assert!(Svd::new(&DMatrix::zeros(0, 3)).unwrap().singular_values.is_empty());
    }

    #[test]
    fn eigen_is_sorted_and_orthonormal() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let (values, vectors) = sorted_eigen(&m);
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        let d = DMatrix::from_diagonal(&DVector::from_vec(values));
        assert!((&vectors * d * vectors.transpose() - &m).norm() < 1e-12);
        assert!((vectors.transpose() * &vectors - DMatrix::identity(3, 3)).norm() < 1e-12);
    }
}
