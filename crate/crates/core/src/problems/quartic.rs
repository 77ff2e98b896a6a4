use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal, Uniform};

use super::check_bundle_size;
use crate::bundle::sigma_check;
use crate::error::{Error, Result};
use crate::oracle::{Evaluation, Oracle, OracleSample, Region};
use crate::linalg::Svd;

/// Data shared by the quartic families: `f_i(x) = g_iᵀx + ½xᵀH_ix + (c_i/24)|x|⁴`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticPieces {
    pub g: Vec<DVector<f64>>,
    pub h: Vec<DMatrix<f64>>,
    pub c: Vec<f64>,
    /// Positive simplex weights with `Σ λ_i g_i = 0`.
    pub true_lambda: DVector<f64>,
    pub seed: Option<u64>,
}

const MAX_RESAMPLES: usize = 100;

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    a.qr().q()
}

impl QuarticPieces {
    pub fn generate(n: usize, k: usize, seed: u64) -> Result<Self> {
        check_bundle_size(n, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Uniform::new_inclusive(0.5, 2.0).expect("valid range");

        let mut found = None;
        for _ in 0..MAX_RESAMPLES {
            let mut lambda = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(Exp1));
            lambda /= lambda.sum();
            let mut g: Vec<DVector<f64>> = (0..k.saturating_sub(1))
                .map(|_| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let mut last = DVector::zeros(n);
            for (gi, &li) in g.iter().zip(lambda.iter()) {
                last -= gi * li;
            }
            g.push(last / lambda[k - 1]);
            if sigma_check(&g)? > 1e-8 {
                found = Some((g, lambda));
                break;
            }
        }
        let (g, true_lambda) = found.ok_or_else(|| {
            Error::GenerationFailure(format!(
                "no affinely independent gradients after {MAX_RESAMPLES} draws (n = {n}, k = {k})"
            ))
        })?;

        let h = (0..k)
            .map(|_| {
                let q = random_orthogonal(n, &mut rng);
                let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.sample(unit)));
                let h = q.transpose() * d * q;
                (&h + h.transpose()) * 0.5
            })
            .collect();
        let c = (0..k).map(|_| rng.sample(unit)).collect();
        Ok(Self { g, h, c, true_lambda, seed: Some(seed) })
    }

    pub fn n(&self) -> usize {
        self.g[0].len()
    }

    pub fn k(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.g.len();
        if k == 0 {
            return Err(Error::Schema("at least one piece is required".into()));
        }
        let n = self.g[0].len();
        if self.h.len() != k || self.c.len() != k || self.true_lambda.len() != k {
            return Err(Error::Schema("g, h, c and true_lambda must have k entries".into()));
        }
        if self.g.iter().any(|g| g.len() != n) || self.h.iter().any(|h| h.shape() != (n, n)) {
            return Err(Error::Schema("piece dimensions disagree".into()));
        }
        check_bundle_size(n, k)
    }

    /// Value of piece `i`.
    pub fn piece_value(&self, i: usize, x: &DVector<f64>) -> f64 {
        let r2 = x.norm_squared();
        self.g[i].dot(x) + 0.5 * x.dot(&(&self.h[i] * x)) + self.c[i] / 24.0 * r2 * r2
    }

    pub fn piece_values(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.k()).map(|i| self.piece_value(i, x)).collect()
    }

    pub fn piece_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.g[i] + &self.h[i] * x + x * (self.c[i] / 6.0 * x.norm_squared())
    }

    pub fn piece_hessian(&self, i: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let quart = DMatrix::identity(n, n) * x.norm_squared() + x * x.transpose() * 2.0;
        &self.h[i] + quart * (self.c[i] / 6.0)
    }
}

fn dominant(values: &[f64]) -> (usize, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let gap = if values.len() > 1 {
        values[order[0]] - values[order[1]]
    } else {
        f64::INFINITY
    };
    (order[0], gap)
}

/// Pointwise maximum of the quartic pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxQuartProblem {
    pub pieces: QuarticPieces,
}

impl MaxQuartProblem {
    pub fn generate(n: usize, k: usize, seed: u64) -> Result<Self> {
        Ok(Self { pieces: QuarticPieces::generate(n, k, seed)? })
    }

    pub fn n(&self) -> usize {
        self.pieces.n()
    }

    pub fn k(&self) -> usize {
        self.pieces.k()
    }

    /// Index of the strictly dominant piece, if the top two values are separated.
    pub fn region(&self, x: &DVector<f64>) -> Option<usize> {
        let values = self.pieces.piece_values(x);
        let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let (top, gap) = dominant(&values);
        (gap > 1e-10 * scale).then_some(top)
    }

    /// One point per activity region, at distance `radius` from the minimizer 0.
    ///
    /// Point `i` lies along the least-norm direction `d` with `g_jᵀd = −1` for all
    /// `j ≠ i`; the radius of a point is halved until its region label is `i`.
    pub fn full_bundle(&self, radius: f64) -> Result<Vec<DVector<f64>>> {
        let (n, k) = (self.n(), self.k());
        let mut points = Vec::with_capacity(k);
        for i in 0..k {
            let dir = if k == 1 {
                let mut e = DVector::zeros(n);
                e[0] = 1.0;
                e
            } else {
                let others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
                let g = DMatrix::from_fn(k - 1, n, |r, c| self.pieces.g[others[r]][c]);
                let rhs = DVector::from_element(k - 1, -1.0);
                Svd::new(&g)?.solve(&rhs, 1e-14).normalize()
            };
            let mut r = radius;
            let point = loop {
                let p = &dir * r;
                if k == 1 || self.region(&p) == Some(i) {
                    break p;
                }
                r *= 0.5;
                if r < radius * 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "could not place a point in region {i} near radius {radius:e}"
                    )));
                }
            };
            points.push(point);
        }
        Ok(points)
    }
}

impl Oracle for MaxQuartProblem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        let values = self.pieces.piece_values(x);
        let (top, _) = dominant(&values);
        let region = self.region(x);
        Evaluation {
            sample: OracleSample {
                point: x.clone(),
                value: values[top],
                gradient: self.pieces.piece_gradient(top, x),
                hessian: self.pieces.piece_hessian(top, x),
            },
            in_domain: region.is_some(),
            region: region.map(Region::Piece),
        }
    }
}

/// Sum of absolute values of the quartic pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct EucSumProblem {
    pub pieces: QuarticPieces,
}

impl EucSumProblem {
    pub fn generate(n: usize, k: usize, seed: u64) -> Result<Self> {
        Ok(Self { pieces: QuarticPieces::generate(n, k, seed)? })
    }

    pub fn n(&self) -> usize {
        self.pieces.n()
    }

    pub fn k(&self) -> usize {
        self.pieces.k()
    }

    pub fn signs(&self, x: &DVector<f64>) -> Vec<i8> {
        self.pieces
            .piece_values(x)
            .iter()
            .map(|&v| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 })
            .collect()
    }
}

impl Oracle for EucSumProblem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        let n = self.n();
        let values = self.pieces.piece_values(x);
        let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let in_domain = scale > 0.0 && values.iter().all(|v| v.abs() > 1e-10 * scale);
        let signs = self.signs(x);
        let mut gradient = DVector::zeros(n);
        let mut hessian = DMatrix::zeros(n, n);
        for (i, &s) in signs.iter().enumerate() {
            if s != 0 {
                let s = f64::from(s);
                gradient += self.pieces.piece_gradient(i, x) * s;
                hessian += self.pieces.piece_hessian(i, x) * s;
            }
        }
        Evaluation {
            sample: OracleSample {
                point: x.clone(),
                value: values.iter().map(|v| v.abs()).sum(),
                gradient,
                hessian,
            },
            in_domain,
            region: Some(Region::Signs(signs)),
        }
    }
}
