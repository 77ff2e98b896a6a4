//! The bundle of reference points, the optimality measure and the replacement rule.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{diameter, lifted_columns, singular_values};
use crate::oracle::{check_finite, Evaluation, Oracle, OracleSample, Region};
use crate::qp::simplex::{combine, minimize_over_simplex, MinNorm};

/// Reference points with their cached oracle data. The size never changes.
#[derive(Debug, Clone)]
pub struct Bundle {
    samples: Vec<OracleSample>,
    regions: Vec<Option<Region>>,
}

/// Points closer than `1e-14` relative to their magnitude are treated as equal.
pub(crate) fn coincide(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    (a - b).norm() <= 1e-14 * a.norm().max(b.norm())
}

impl Bundle {
    /// Builds a bundle from samples, checking shapes and that points are distinct.
    pub fn new(samples: Vec<OracleSample>) -> Result<Self> {
        let regions = vec![None; samples.len()];
        Self::with_regions(samples, regions)
    }

    pub fn with_regions(samples: Vec<OracleSample>, regions: Vec<Option<Region>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("bundle needs at least one point".into()));
        }
        if regions.len() != samples.len() {
            return Err(Error::InvalidInput("one region label per sample required".into()));
        }
        let n = samples[0].dim();
        for s in &samples {
            s.validate()?;
            if s.dim() != n {
                return Err(Error::InvalidInput("bundle points have different dimensions".into()));
            }
        }
        for i in 0..samples.len() {
            for j in (i + 1)..samples.len() {
                if coincide(&samples[i].point, &samples[j].point) {
                    return Err(Error::DegenerateBundle(format!(
                        "reference points {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Self { samples, regions })
    }

    /// Samples the oracle at each point. Points outside the smooth region are rejected.
    pub fn evaluate<O: Oracle + ?Sized>(oracle: &O, points: &[DVector<f64>]) -> Result<Self> {
        let mut samples = Vec::with_capacity(points.len());
        let mut regions = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            check_finite(p, "bundle point")?;
            let e = oracle.evaluate(p);
            if !e.in_domain {
                return Err(Error::InvalidInput(format!(
                    "bundle point {i} is not in the smooth region"
                )));
            }
            samples.push(e.sample);
            regions.push(e.region);
        }
        Self::with_regions(samples, regions)
    }

    pub fn from_evaluations(evaluations: Vec<Evaluation>) -> Result<Self> {
        let (samples, regions) = evaluations.into_iter().map(|e| (e.sample, e.region)).unzip();
        Self::with_regions(samples, regions)
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn samples(&self) -> &[OracleSample] {
        &self.samples
    }

    pub fn regions(&self) -> &[Option<Region>] {
        &self.regions
    }

    pub fn points(&self) -> Vec<DVector<f64>> {
        self.samples.iter().map(|s| s.point.clone()).collect()
    }

    pub fn gradients(&self) -> Vec<DVector<f64>> {
        self.samples.iter().map(|s| s.gradient.clone()).collect()
    }

    /// Largest pairwise distance between reference points.
    pub fn diameter(&self) -> f64 {
        diameter(self.samples.iter().map(|s| &s.point))
    }

    /// Smallest value among the reference points.
    pub fn best_value(&self) -> f64 {
        self.samples.iter().map(|s| s.value).fold(f64::INFINITY, f64::min)
    }

    /// Index of a reference point coinciding with `x`, if any.
    pub fn position_of(&self, x: &DVector<f64>) -> Option<usize> {
        self.samples.iter().position(|s| coincide(&s.point, x))
    }

    /// Copy with entry `index` replaced. The caller guarantees distinctness.
    pub(crate) fn replaced(&self, index: usize, sample: OracleSample, region: Option<Region>) -> Self {
        let mut out = self.clone();
        out.samples[index] = sample;
        out.regions[index] = region;
        out
    }
}

/// Simplex weights attaining the optimality measure.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierEstimate {
    pub lambda: DVector<f64>,
    /// Norm of the minimum-norm element of the convex hull of the gradients.
    pub theta: f64,
    /// `Σ λ_s g_s`.
    pub aggregate_gradient: DVector<f64>,
}

impl MultiplierEstimate {
    /// Weighted average `Σ λ_s s` of the bundle points.
    pub fn center(&self, bundle: &Bundle) -> DVector<f64> {
        combine(&bundle.points(), &self.lambda)
    }
}

/// Minimum-norm point of the convex hull of `gradients`.
pub fn theta(gradients: &[DVector<f64>]) -> Result<MultiplierEstimate> {
    let k = gradients.len();
    if k == 0 {
        return Err(Error::InvalidInput("theta needs at least one gradient".into()));
    }
    let n = gradients[0].len();
    for g in gradients {
        if g.len() != n {
            return Err(Error::InvalidInput("gradients have different lengths".into()));
        }
        check_finite(g, "gradient")?;
    }
    let sol = minimize_over_simplex(&MinNorm { points: gradients }, 100 * k)?;
    let mut lambda = sol.weights;
    if lambda.iter().any(|&v| v < -1e-12) {
        return Err(Error::SolverFailure {
            iterations: sol.iterations,
            gap: sol.gap,
            best: lambda.iter().copied().collect(),
        });
    }
    lambda.iter_mut().for_each(|v| *v = v.max(0.0));
    lambda /= lambda.sum();
    let aggregate_gradient = combine(gradients, &lambda);
    Ok(MultiplierEstimate {
        theta: aggregate_gradient.norm(),
        lambda,
        aggregate_gradient,
    })
}

/// `k`-th largest singular value of the matrix with columns `(g_i; 1)`.
pub fn sigma_check(gradients: &[DVector<f64>]) -> Result<f64> {
    let k = gradients.len();
    if k == 0 {
        return Err(Error::InvalidInput("sigma check needs at least one gradient".into()));
    }
    let n = gradients[0].len();
    if gradients.iter().any(|g| g.len() != n) {
        return Err(Error::InvalidInput("gradients have different lengths".into()));
    }
    if k > n + 1 {
        return Err(Error::InvalidInput(format!(
            "{k} gradients in R^{n} cannot be affinely independent (at most n + 1 = {})",
            n + 1
        )));
    }
    for g in gradients {
        check_finite(g, "gradient")?;
    }
    let sv = singular_values(&lifted_columns(gradients, 1.0))?;
    Ok(sv[k - 1])
}

/// Index whose replacement by `candidate` gives the smallest measure; ties go to the lowest index.
fn best_swap(gradients: &[DVector<f64>], candidate: &DVector<f64>) -> Result<usize> {
    let k = gradients.len();
    if k == 1 {
        return Ok(0);
    }
    let mut values = Vec::with_capacity(k);
    let mut trial = gradients.to_vec();
    for i in 0..k {
        trial[i] = candidate.clone();
        values.push(theta(&trial)?.theta);
        trial[i] = gradients[i].clone();
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(values.iter().position(|&v| v <= min + 1e-12).expect("nonempty"))
}

/// Swaps `candidate` into the bundle in place of the point minimizing the resulting measure.
pub fn replace_reference(bundle: &Bundle, candidate: Evaluation) -> Result<(Bundle, usize)> {
    candidate.sample.validate()?;
    if candidate.sample.dim() != bundle.dim() {
        return Err(Error::InvalidInput("candidate dimension differs from the bundle".into()));
    }
    if let Some(i) = bundle.position_of(&candidate.sample.point) {
        return Err(Error::DegenerateBundle(format!(
            "candidate coincides with reference point {i}"
        )));
    }
    let index = best_swap(&bundle.gradients(), &candidate.sample.gradient)?;
    Ok((bundle.replaced(index, candidate.sample, candidate.region), index))
}

/// Approximate optimality certificate for the current bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub center: DVector<f64>,
    /// `f` at the center, or `None` when the center lies outside the smooth region.
    pub upper_value: Option<f64>,
    pub theta: f64,
    pub diameter: f64,
    /// `L · diam S` when a Lipschitz constant is supplied.
    pub gap_bound: Option<f64>,
}

/// Evaluates the weighted center once and packages the certificate.
pub fn optimality_certificate<O: Oracle + ?Sized>(
    oracle: &O,
    bundle: &Bundle,
    multipliers: &MultiplierEstimate,
    lipschitz: Option<f64>,
) -> Result<Certificate> {
    if multipliers.lambda.len() != bundle.k() {
        return Err(Error::InvalidInput("multipliers do not match the bundle size".into()));
    }
    if let Some(l) = lipschitz {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::InvalidInput(format!("invalid Lipschitz constant {l}")));
        }
    }
    let center = multipliers.center(bundle);
    let eval = oracle.evaluate(&center);
    let diameter = bundle.diameter();
    Ok(Certificate {
        upper_value: eval.in_domain.then_some(eval.sample.value),
        center,
        theta: multipliers.theta,
        diameter,
        gap_bound: lipschitz.map(|l| l * diameter),
    })
}
