use nalgebra::DVector;

use super::kkt::LinearModel;
use super::simplex::{combine, minimize_over_simplex, ProxDual};
use crate::error::{Error, Result};

/// Minimizer of the proximal cutting-plane model and its dual weights.
#[derive(Debug, Clone)]
pub struct ProxStep {
    pub point: DVector<f64>,
    /// Simplex weights on the cuts; `Σ α_s ∇l_s + ρ(x̂ − z) = 0`.
    pub weights: DVector<f64>,
    /// `max_s l_s(x̂)`.
    pub model_value: f64,
}

/// Minimizes `max_s l_s(x) + (ρ/2)|x − z|²` through its simplex dual.
pub fn solve_proximal_cut_qp(
    cuts: &[LinearModel],
    center: &DVector<f64>,
    rho: f64,
) -> Result<ProxStep> {
    if cuts.is_empty() {
        return Err(Error::InvalidInput("proximal step needs at least one cut".into()));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    let n = center.len();
    if cuts.iter().any(|c| c.gradient.len() != n || c.anchor.len() != n) {
        return Err(Error::InvalidInput("cut dimensions disagree with the center".into()));
    }
    let gradients: Vec<DVector<f64>> = cuts.iter().map(|c| c.gradient.clone()).collect();
    let offsets = DVector::from_iterator(cuts.len(), cuts.iter().map(|c| c.eval(center)));
    let dual = ProxDual {
        gradients: &gradients,
        offsets: &offsets,
        rho,
    };
    let sol = minimize_over_simplex(&dual, 100 * cuts.len().max(10))?;
    let point = center - combine(&gradients, &sol.weights) / rho;
    let model_value = cuts
        .iter()
        .map(|c| c.eval(&point))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ProxStep {
        point,
        weights: sol.weights,
        model_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(slope: f64) -> LinearModel {
        LinearModel::new(0.0, dvector![slope], dvector![0.0])
    }

    #[test]
    fn single_cut_is_gradient_step() {
        let g = dvector![1.0, -2.0];
        let cut = LinearModel::new(0.3, g.clone(), dvector![5.0, 5.0]);
        let z = dvector![0.5, 0.25];
        let step = solve_proximal_cut_qp(&[cut], &z, 1.0).unwrap();
        assert!((step.point - (&z - &g)).norm() < 1e-15);
        assert_eq!(step.weights, dvector![1.0]);
    }

    #[test]
    fn symmetric_cuts_at_zero() {
        let step = solve_proximal_cut_qp(&[line(1.0), line(-1.0)], &dvector![0.0], 1.0).unwrap();
        assert!(step.point[0].abs() < 1e-15);
        assert!((step.weights[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn symmetric_cuts_off_center() {
        // α₁ − α₂ + x̂ − 0.3 = 0 with x̂ = 0 and α₁ + α₂ = 1.
        let step = solve_proximal_cut_qp(&[line(1.0), line(-1.0)], &dvector![0.3], 1.0).unwrap();
        assert!(step.point[0].abs() < 1e-14);
        assert!((step.weights[0] - 0.65).abs() < 1e-14);
        assert!((step.weights[1] - 0.35).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_proximal_cut_qp(&[], &dvector![0.0], 1.0).is_err());
        assert!(solve_proximal_cut_qp(&[line(1.0)], &dvector![0.0], 0.0).is_err());
        assert!(solve_proximal_cut_qp(&[line(1.0)], &dvector![0.0, 1.0], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn prox_step_is_optimal(seed in any::<u64>(), n in 1usize..6, m in 1usize..10, rho in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let cuts: Vec<LinearModel> = (0..m)
                .map(|_| {
                    let g = v(&mut rng);
                    let a = v(&mut rng);
                    LinearModel::new(rng.random_range(-1.0..1.0), g, a)
                })
                .collect();
            let z = v(&mut rng);
            let step = solve_proximal_cut_qp(&cuts, &z, rho).unwrap();
            let mut agg = (&step.point - &z) * rho;
            for (c, &a) in cuts.iter().zip(step.weights.iter()) {
                agg += &c.gradient * a;
            }
            prop_assert!(agg.amax() < 1e-8);
            let obj = |x: &DVector<f64>| {
                cuts.iter().map(|c| c.eval(x)).fold(f64::NEG_INFINITY, f64::max)
                    + 0.5 * rho * (x - &z).norm_squared()
            };
            let best = obj(&step.point);
            for _ in 0..1000 {
                let probe = &step.point + v(&mut rng) * rng.random_range(0.0..2.0);
                prop_assert!(best <= obj(&probe) + 1e-10);
            }
        }
    }
}
