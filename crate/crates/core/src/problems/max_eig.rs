use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::sorted_eigen;
use crate::oracle::{Evaluation, Oracle, OracleSample};

/// `f(x) = λ_max(A_0 + Σ_i x_i A_i)` for symmetric `m×m` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxEigProblem {
    /// `A_0, …, A_n`.
    pub matrices: Vec<DMatrix<f64>>,
    pub seed: Option<u64>,
    /// Best objective value found by a multistart search, when recorded.
    pub reference_value: Option<f64>,
    /// Multiplicity of `λ_max` at the best point found, when recorded.
    pub multiplicity: Option<usize>,
}

impl MaxEigProblem {
    /// Matrices with independent standard normal entries, symmetrized. The
    /// trace is removed from `A_1, …, A_n`, so no combination of them is
    /// negative definite: `f ≥ tr(A_0)/m` and `f` grows without bound in every
    /// direction, hence a minimizer exists.
    pub fn generate(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput("max-eig needs m > 0 and n > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrices = (0..=n)
            .map(|i| {
                let b = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut a = (&b + b.transpose()) * 0.5;
                if i > 0 {
                    let shift = a.trace() / m as f64;
                    for d in 0..m {
                        a[(d, d)] -= shift;
                    }
                }
                a
            })
            .collect();
        Ok(Self { matrices, seed: Some(seed), reference_value: None, multiplicity: None })
    }

    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let p = Self { matrices, seed: None, reference_value: None, multiplicity: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrices.len() < 2 {
            return Err(Error::Schema("max-eig needs A_0 and at least one A_i".into()));
        }
        let m = self.m();
        for (i, a) in self.matrices.iter().enumerate() {
            if a.shape() != (m, m) {
                return Err(Error::Schema(format!("matrix {i} is not {m}x{m}")));
            }
            if (a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
                return Err(Error::Schema(format!("matrix {i} is not symmetric")));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn n(&self) -> usize {
        self.matrices.len() - 1
    }

    /// `A_0 + Σ x_i A_i`.
    pub fn matrix_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut a = self.matrices[0].clone();
        for (xi, ai) in x.iter().zip(&self.matrices[1..]) {
            a += ai * *xi;
        }
        a
    }

    /// Eigenvalues of `A(x)` in descending order.
    pub fn eigenvalues(&self, x: &DVector<f64>) -> Vec<f64> {
        sorted_eigen(&self.matrix_at(x)).0
    }
}

impl Oracle for MaxEigProblem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        let (n, m) = (self.n(), self.m());
        let (values, vectors) = sorted_eigen(&self.matrix_at(x));
        let l1 = values[0];
        let gap = if m > 1 { l1 - values[1] } else { f64::INFINITY };
        let in_domain = gap >= 1e-10 * (1.0 + l1.abs());
        let v1 = vectors.column(0);
        // b[j][p] = v_pᵀ A_j v_1
        let b: Vec<DVector<f64>> = self.matrices[1..]
            .iter()
            .map(|a| vectors.transpose() * (a * v1))
            .collect();
        let gradient = DVector::from_fn(n, |j, _| b[j][0]);
        let hessian = if in_domain {
            let weights: Vec<f64> = (1..m).map(|p| 2.0 / (l1 - values[p])).collect();
            let mut h = DMatrix::from_fn(n, n, |j, l| {
                (1..m).map(|p| b[j][p] * b[l][p] * weights[p - 1]).sum()
            });
            h = (&h + h.transpose()) * 0.5;
            h
        } else {
            DMatrix::zeros(n, n)
        };
        Evaluation {
            sample: OracleSample { point: x.clone(), value: l1, gradient, hessian },
            in_domain,
            region: None,
        }
    }
}
