use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracle::FnOracle;

/// `a|x₁| + q|x|²`, smooth away from `x₁ = 0`.
fn abs_quad(n: usize, a: f64, q: f64) -> FnOracle<impl Fn(&DVector<f64>) -> Evaluation> {
    FnOracle::new(n, move |x: &DVector<f64>| {
        let s = if x[0] > 0.0 { 1.0 } else { -1.0 };
        let mut gradient = x * (2.0 * q);
        gradient[0] += a * s;
        Evaluation {
            sample: OracleSample {
                point: x.clone(),
                value: a * x[0].abs() + q * x.norm_squared(),
                gradient,
                hessian: DMatrix::identity(n, n) * (2.0 * q),
            },
            in_domain: x[0] != 0.0,
            region: Some(Region::Piece(usize::from(x[0] > 0.0))),
        }
    })
}

/// `q|x|²`, smooth everywhere.
fn quad(n: usize, q: f64) -> FnOracle<impl Fn(&DVector<f64>) -> Evaluation> {
    FnOracle::new(n, move |x: &DVector<f64>| Evaluation {
        sample: OracleSample {
            point: x.clone(),
            value: q * x.norm_squared(),
            gradient: x * (2.0 * q),
            hessian: DMatrix::identity(n, n) * (2.0 * q),
        },
        in_domain: true,
        region: None,
    })
}

fn config(variant: Variant) -> NewtonConfig {
    NewtonConfig { variant, max_iterations: 50, ..NewtonConfig::default() }
}

#[test]
fn single_point_bundle_is_classical_newton() {
    let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
    let b = dvector![1.0, -2.0, 0.5];
    let (a2, b2) = (a.clone(), b.clone());
    let oracle = FnOracle::new(3, move |x: &DVector<f64>| Evaluation {
        sample: OracleSample {
            point: x.clone(),
            value: 0.5 * x.dot(&(&a2 * x)) - b2.dot(x),
            gradient: &a2 * x - &b2,
            hessian: a2.clone(),
        },
        in_domain: true,
        region: None,
    });
    let bundle = Bundle::evaluate(&oracle, &[dvector![5.0, 5.0, 5.0]]).unwrap();
    let cfg = NewtonConfig { epsilon_bar: 1e-8, delta_bar: 1e-8, ..config(Variant::Convex) };
    let trace = run_convex(&oracle, bundle, &cfg).unwrap();
    let exact = a.lu().solve(&b).unwrap();
    assert_eq!(trace.iterations(), 1);
    assert_eq!(trace.termination.tag, TerminationTag::NearlyOptimal);
    assert!((&trace.records[0].xhat - &exact).norm() < 1e-12);
    assert_eq!(trace.final_diameter, 0.0);
}

/// Two tangent lines of |x| + x² meet at x̂; the point with x̂'s sign is replaced.
fn scripted_abs_square(mut p: f64, mut m: f64, steps: usize) -> Vec<f64> {
    let f = |x: f64| x.abs() + x * x;
    let g = |x: f64| x.signum() + 2.0 * x;
    let mut out = Vec::new();
    for _ in 0..steps {
        let x = (f(m) - g(m) * m - f(p) + g(p) * p) / (g(p) - g(m));
        if x == 0.0 || x == p || x == m {
            break;
        }
        out.push(x);
        if x > 0.0 {
            p = x;
        } else {
            m = x;
        }
    }
    out
}

#[test]
fn two_point_abs_square_matches_script() {
    let oracle = abs_quad(1, 1.0, 1.0);
    let bundle = Bundle::evaluate(&oracle, &[dvector![0.3], dvector![-0.4]]).unwrap();
    let trace = run_convex(&oracle, bundle, &config(Variant::Convex)).unwrap();
    let script = scripted_abs_square(0.3, -0.4, 50);
    assert!(trace.iterations() >= 4);
    for (r, &x) in trace.records.iter().zip(&script) {
        assert!((r.xhat[0] - x).abs() <= 1e-12 * x.abs() + 1e-15);
        assert_eq!(r.xhat_region, r.replaced_region);
    }
    let min_diam = trace.records.iter().map(|r| r.diameter).fold(trace.final_diameter, f64::min);
    assert!(min_diam < 1e-14, "{min_diam:e}");
    // k-step quadratic decay: each pair of steps roughly squares the diameter.
    let d: Vec<f64> = trace.records.iter().map(|r| r.diameter).collect();
    for w in d.windows(3).filter(|w| w[2] > 1e-12) {
        assert!(w[2] <= 10.0 * w[0] * w[0], "{w:?}");
    }
}

#[test]
fn equal_gradients_trip_sigma_check() {
    let oracle = FnOracle::new(1, |x: &DVector<f64>| Evaluation {
        sample: OracleSample {
            point: x.clone(),
            value: x[0],
            gradient: dvector![1.0],
            hessian: DMatrix::identity(1, 1),
        },
        in_domain: true,
        region: None,
    });
    let bundle = Bundle::evaluate(&oracle, &[dvector![1.0], dvector![2.0]]).unwrap();
    let trace = run_convex(&oracle, bundle, &config(Variant::Convex)).unwrap();
    assert_eq!(trace.termination.tag, TerminationTag::AffineDependentGradients);
    assert_eq!(trace.iterations(), 0);
}

#[test]
fn sum_with_zero_remainder_matches_convex() {
    let f = abs_quad(2, 1.0, 1.0);
    let r = quad(2, 0.0);
    let pts = [dvector![0.3, 0.2], dvector![-0.4, 0.1]];
    let convex = run_convex(&f, Bundle::evaluate(&f, &pts).unwrap(), &config(Variant::Convex)).unwrap();
    let sum = run_sum(&f, &r, Bundle::evaluate(&f, &pts).unwrap(), &config(Variant::Sum)).unwrap();
    assert_eq!(convex.iterations(), sum.iterations());
    for (a, b) in convex.records.iter().zip(&sum.records) {
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.xhat, b.xhat);
    }
    assert_eq!(convex.termination.tag, sum.termination.tag);
}

#[test]
fn sum_with_concave_remainder_converges() {
    let f = abs_quad(1, 1.0, 1.0);
    let r = quad(1, -0.5);
    let bundle = Bundle::evaluate(&f, &[dvector![0.3], dvector![-0.4]]).unwrap();
    let trace = run_sum(&f, &r, bundle, &config(Variant::Sum)).unwrap();
    let min_diam = trace.records.iter().map(|r| r.diameter).fold(trace.final_diameter, f64::min);
    assert!(min_diam < 1e-13, "{min_diam:e} {:?}", trace.termination);
}

#[test]
fn sum_with_strong_concavity_is_unbounded() {
    // On the line x₁ = const the curvature of F is 2 − 10 < 0.
    let f = abs_quad(2, 1.0, 1.0);
    let r = quad(2, -5.0);
    let bundle = Bundle::evaluate(&f, &[dvector![0.3, 0.1], dvector![-0.4, 0.2]]).unwrap();
    let trace = run_sum(&f, &r, bundle, &config(Variant::Sum)).unwrap();
    assert_eq!(trace.termination.tag, TerminationTag::UnboundedSubproblem);
}

#[test]
fn weakly_convex_with_zero_eta_matches_convex() {
    let f = abs_quad(2, 1.0, 1.0);
    let pts = [dvector![0.3, 0.2], dvector![-0.4, 0.1]];
    let convex = run_convex(&f, Bundle::evaluate(&f, &pts).unwrap(), &config(Variant::Convex)).unwrap();
    let weak = run_weakly_convex(
        &f,
        Bundle::evaluate(&f, &pts).unwrap(),
        &NewtonConfig { eta: Eta::Fixed(0.0), ..config(Variant::WeaklyConvex) },
    )
    .unwrap();
    assert_eq!(convex.iterations(), weak.iterations());
    for (a, b) in convex.records.iter().zip(&weak.records) {
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.xhat, b.xhat);
    }
}

/// Scripted solve for `|x| − ¼x²` with shift η: the shifted tangent lines meet at x̂.
fn scripted_weak(mut p: f64, mut m: f64, eta: f64, steps: usize) -> Vec<f64> {
    let f = |x: f64| x.abs() - 0.25 * x * x + 0.5 * eta * x * x;
    let g = |x: f64| x.signum() - 0.5 * x + eta * x;
    let mut out = Vec::new();
    for _ in 0..steps {
        let x = (f(m) - g(m) * m - f(p) + g(p) * p) / (g(p) - g(m));
        if x == 0.0 || x == p || x == m {
            break;
        }
        out.push(x);
        if x > 0.0 {
            p = x;
        } else {
            m = x;
        }
    }
    out
}

#[test]
fn weakly_convex_abs_minus_quarter_square() {
    let oracle = abs_quad(1, 1.0, -0.25);
    let bundle = Bundle::evaluate(&oracle, &[dvector![0.2], dvector![-0.2]]).unwrap();
    let cfg = NewtonConfig { eta: Eta::Fixed(1.0), ..config(Variant::WeaklyConvex) };
    let trace = run_weakly_convex(&oracle, bundle, &cfg).unwrap();
    let script = scripted_weak(0.2, -0.2, 1.0, 50);
    for (r, &x) in trace.records.iter().zip(&script) {
        assert!((r.xhat[0] - x).abs() <= 1e-12 * x.abs() + 1e-15);
    }
    let min_diam = trace.records.iter().map(|r| r.diameter).fold(trace.final_diameter, f64::min);
    assert!(min_diam < 1e-13);
}

#[test]
fn dynamic_eta_tracks_negative_curvature() {
    let oracle = abs_quad(1, 1.0, -0.25);
    let bundle = Bundle::evaluate(&oracle, &[dvector![0.2], dvector![-0.2]]).unwrap();
    let cfg = NewtonConfig { eta: Eta::Dynamic, ..config(Variant::WeaklyConvex) };
    let trace = run_weakly_convex(&oracle, bundle, &cfg).unwrap();
    let expected = 0.5 + 1e-6 * 1.5;
    assert!((trace.records[0].eta - expected).abs() < 1e-15);
}

#[test]
fn identity_hessian_wrapper_reports_scaled_identity() {
    let w = identity_hessian_wrapper(abs_quad(3, 1.0, 1.0), 1.0).unwrap();
    assert_eq!(w.evaluate(&dvector![0.1, 0.2, 0.3]).sample.hessian, DMatrix::identity(3, 3));
    assert!(identity_hessian_wrapper(quad(1, 1.0), 0.0).is_err());
}

#[test]
fn identity_hessian_single_point_is_gradient_step() {
    let w = identity_hessian_wrapper(quad(2, 3.0), 4.0).unwrap();
    let x0 = dvector![1.0, -1.0];
    let bundle = Bundle::evaluate(&w, std::slice::from_ref(&x0)).unwrap();
    let trace = run_convex(&w, bundle, &NewtonConfig { max_iterations: 1, ..config(Variant::Convex) }).unwrap();
    let expected = &x0 - &x0 * (6.0 / 4.0);
    assert!((&trace.records[0].xhat - expected).norm() < 1e-15);
}

#[test]
fn identity_hessian_still_converges() {
    let w = identity_hessian_wrapper(abs_quad(1, 1.0, 1.0), 2.0).unwrap();
    let bundle = Bundle::evaluate(&w, &[dvector![0.3], dvector![-0.4]]).unwrap();
    let trace = run_convex(&w, bundle, &NewtonConfig { max_iterations: 500, ..config(Variant::Convex) }).unwrap();
    let min_diam = trace.records.iter().map(|r| r.diameter).fold(trace.final_diameter, f64::min);
    assert!(min_diam < 1e-8, "{min_diam:e}");
}

#[test]
fn oracle_calls_one_per_iteration() {
    let oracle = abs_quad(2, 1.0, 1.0);
    let bundle = Bundle::evaluate(&oracle, &[dvector![0.3, 0.2], dvector![-0.4, 0.1]]).unwrap();
    let trace = run_convex(&oracle, bundle, &config(Variant::Convex)).unwrap();
    for (i, r) in trace.records.iter().enumerate() {
        assert_eq!(r.oracle_calls, i + 1);
        assert_eq!(r.iteration, i);
    }
}

#[test]
fn iteration_cap_and_variant_mismatch() {
    let oracle = abs_quad(2, 1.0, 1.0);
    let bundle = Bundle::evaluate(&oracle, &[dvector![0.3, 0.2], dvector![-0.4, 0.1]]).unwrap();
    let cfg = NewtonConfig { max_iterations: 2, ..config(Variant::Convex) };
    let trace = run_convex(&oracle, bundle.clone(), &cfg).unwrap();
    assert_eq!(trace.termination.tag, TerminationTag::IterationCap);
    assert_eq!(trace.iterations(), 2);
    assert!(run_convex(&oracle, bundle.clone(), &config(Variant::Sum)).is_err());
    let bad = NewtonConfig { epsilon_bar: -1.0, ..config(Variant::Convex) };
    assert!(run_convex(&oracle, bundle, &bad).is_err());
}

#[test]
fn max_quart_full_bundle_preserves_regions() {
    use crate::problems::MaxQuartProblem;
    for seed in 0..5 {
        let p = MaxQuartProblem::generate(6, 3, seed).unwrap();
        let bundle = Bundle::evaluate(&p, &p.full_bundle(0.05).unwrap()).unwrap();
        let trace = run_convex(&p, bundle, &config(Variant::Convex)).unwrap();
        assert!(trace.iterations() > 3);
        for r in &trace.records {
            assert_eq!(r.xhat_region, r.replaced_region);
        }
        let min_theta = trace.records.iter().map(|r| r.theta).fold(f64::INFINITY, f64::min);
        let min_diam = trace.records.iter().map(|r| r.diameter).fold(f64::INFINITY, f64::min);
        assert!(min_theta < 1e-10 && min_diam < 1e-10, "{min_theta:e} {min_diam:e}");
    }
}

#[test]
fn random_subproblems_have_small_residuals() {
    use crate::problems::MaxQuartProblem;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let k = rng.random_range(2..=5);
        let p = MaxQuartProblem::generate(8, k, rng.random()).unwrap();
        let bundle = Bundle::evaluate(&p, &p.full_bundle(0.1).unwrap()).unwrap();
        let trace = run_convex(&p, bundle, &config(Variant::Convex)).unwrap();
        for r in &trace.records {
            assert!(r.kkt_residual < 1e-8);
        }
    }
}
