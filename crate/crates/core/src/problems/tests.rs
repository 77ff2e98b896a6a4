use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bundle::{sigma_check, theta};
use crate::oracle::Region;

fn random_point(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-radius..radius))
}

/// Largest relative central-difference error of the gradient and of the Hessian.
fn derivative_errors(p: &Problem, x: &DVector<f64>) -> (f64, f64) {
    let n = x.len();
    let e = p.evaluate(x);
    let h = 1e-6;
    let mut fd_grad = DVector::zeros(n);
    let mut fd_hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let (ep, em) = (p.evaluate(&xp), p.evaluate(&xm));
        fd_grad[j] = (ep.sample.value - em.sample.value) / (2.0 * h);
        fd_hess.set_column(j, &((ep.sample.gradient - em.sample.gradient) / (2.0 * h)));
    }
    let g = &e.sample.gradient;
    let gerr = (&fd_grad - g).norm() / (1.0 + g.norm());
    let herr = (&fd_hess - &e.sample.hessian).norm() / (1.0 + e.sample.hessian.norm());
    (gerr, herr)
}

#[test]
fn single_piece_is_smooth_with_zero_gradient() {
    let p = MaxQuartProblem::generate(5, 1, 3).unwrap();
    assert_eq!(p.pieces.g[0], DVector::zeros(5));
    let e = p.evaluate(&DVector::zeros(5));
    assert!(e.in_domain);
    assert_eq!(e.sample.value, 0.0);
}

#[test]
fn lambda_balances_gradients() {
    for seed in 0..10 {
        let p = QuarticPieces::generate(10, 4, seed).unwrap();
        let mut s = DVector::zeros(10);
        for (g, &l) in p.g.iter().zip(p.true_lambda.iter()) {
            s += g * l;
        }
        assert!(s.amax() < 1e-12);
        assert!(sigma_check(&p.g).unwrap() > 1e-8);
        for h in &p.h {
            let eig = h.clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() > 0.49 && eig.max() < 2.01);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let a = MaxQuartProblem::generate(10, 4, 7).unwrap();
    let b = MaxQuartProblem::generate(10, 4, 7).unwrap();
    assert_eq!(a, b);
    let c = MaxQuartProblem::generate(10, 4, 8).unwrap();
    assert_ne!(a, c);
}

#[test]
fn rejects_oversized_bundle() {
    assert!(matches!(
        MaxQuartProblem::generate(3, 5, 0),
        Err(Error::BundleTooLarge { k: 5, bound: 4 })
    ));
    assert!(EucSumProblem::generate(3, 4, 0).is_ok());
}

#[test]
fn minimum_value_is_zero_and_positive_nearby() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..5 {
        let p = MaxQuartProblem::generate(6, 4, seed).unwrap();
        assert_eq!(p.evaluate(&DVector::zeros(6)).sample.value, 0.0);
        assert!(!p.evaluate(&DVector::zeros(6)).in_domain);
        for _ in 0..100 {
            let mut x = random_point(&mut rng, 6, 1.0);
            if x.norm() > 1.0 {
                x /= 1.01 * x.norm();
            }
            assert!(p.evaluate(&x).sample.value > 0.0);
        }
    }
}

#[test]
fn theta_vanishes_on_shrinking_full_bundles() {
    let p = MaxQuartProblem::generate(8, 4, 2).unwrap();
    let mut last = f64::INFINITY;
    for &r in &[1e-1, 1e-2, 1e-3, 1e-4] {
        let pts = p.full_bundle(r).unwrap();
        let grads: Vec<DVector<f64>> = pts.iter().map(|x| p.evaluate(x).sample.gradient).collect();
        let t = theta(&grads).unwrap().theta;
        assert!(t < last);
        last = t;
    }
    assert!(last < 1e-3);
}

#[test]
fn full_bundle_labels_each_region_once() {
    for k in 1..=6 {
        let p = MaxQuartProblem::generate(10, k, 40 + k as u64).unwrap();
        let pts = p.full_bundle(0.1).unwrap();
        assert_eq!(pts.len(), k);
        for (i, x) in pts.iter().enumerate() {
            let e = p.evaluate(x);
            assert!(e.in_domain);
            if k > 1 {
                assert_eq!(e.region, Some(Region::Piece(i)));
            }
            assert!(x.norm() <= 0.1 + 1e-15);
        }
    }
}

#[test]
fn euc_sum_all_positive_matches_smooth_sum() {
    let p = EucSumProblem::generate(4, 3, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tested = 0;
    while tested < 5 {
        let x = random_point(&mut rng, 4, 1.0);
        if p.signs(&x).iter().all(|&s| s == 1) {
            let e = p.evaluate(&x);
            let value: f64 = (0..3).map(|i| p.pieces.piece_value(i, &x)).sum();
            let mut hess = DMatrix::zeros(4, 4);
            for i in 0..3 {
                hess += p.pieces.piece_hessian(i, &x);
            }
            assert!((e.sample.value - value).abs() < 1e-14);
            assert!((e.sample.hessian - hess).amax() < 1e-14);
            assert_eq!(e.region, Some(Region::Signs(vec![1, 1, 1])));
            tested += 1;
        }
    }
}

#[test]
fn max_eig_tie_is_outside_domain() {
    let a0 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
    let a1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 0.0]));
    let p = MaxEigProblem::new(vec![a0, a1]).unwrap();
    assert!(!p.evaluate(&DVector::from_element(1, 0.0)).in_domain);
    let e = p.evaluate(&DVector::from_element(1, 0.1));
    assert!(e.in_domain);
    assert!((e.sample.value - 1.1).abs() < 1e-15);
    assert!((e.sample.gradient[0] - 1.0).abs() < 1e-15);
}

#[test]
fn max_eig_shapes() {
    let p = MaxEigProblem::generate(6, 10, 1).unwrap();
    assert_eq!(p.matrices.len(), 11);
    for a in &p.matrices {
        assert_eq!(a.shape(), (6, 6));
        assert_eq!(a, &a.transpose());
    }
}

#[test]
fn json_round_trip() {
    for family in [Family::MaxQuart, Family::EucSum, Family::MaxEig] {
        let mut p = Problem::generate(family, 5, 3, 4, 9).unwrap();
        if let Problem::MaxEig(q) = &mut p {
            q.reference_value = Some(-1.25);
            q.multiplicity = Some(2);
        }
        let text = p.to_json();
        assert!(text.contains(&format!("\"family\": \"{family}\"")));
        assert!(text.contains("\"schema_version\": 1"));
        let back = Problem::from_json(&text).unwrap();
        assert_eq!(back, p);
    }
}

#[test]
fn json_matrices_are_row_major() {
    let a0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]);
    let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]);
    let p = Problem::MaxEig(MaxEigProblem::new(vec![a0, a1]).unwrap());
    let v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
    assert_eq!(v["a"][0], serde_json::json!([1.0, 2.0, 2.0, 5.0]));
}

#[test]
fn json_rejects_bad_documents() {
    let good = Problem::generate(Family::MaxQuart, 3, 2, 0, 1).unwrap().to_json();
    let wrong_version = good.replace("\"schema_version\": 1", "\"schema_version\": 2");
    assert!(matches!(Problem::from_json(&wrong_version), Err(Error::Schema(_))));
    let unknown = good.replace("\"family\"", "\"extra\": 1, \"family\"");
    assert!(matches!(Problem::from_json(&unknown), Err(Error::Schema(_))));
    let bad_family = good.replace("max-quart", "max-cubic");
    assert!(matches!(Problem::from_json(&bad_family), Err(Error::Schema(_))));
    assert!(matches!(Problem::from_json("{"), Err(Error::Schema(_))));
}

#[test]
fn family_names() {
    for f in [Family::MaxQuart, Family::EucSum, Family::MaxEig] {
        assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
    }
    assert!("max".parse::<Family>().is_err());
}

/// Points where every family is smooth, with room for the finite-difference stencil.
fn smooth_points(p: &Problem, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.dim();
    let mut out = Vec::new();
    while out.len() < count {
        let x = random_point(&mut rng, n, 1.0);
        let stencil_ok = (0..n).all(|j| {
            [-1e-6, 0.0, 1e-6].iter().all(|&h| {
                let mut y = x.clone();
                y[j] += h;
                let e = p.evaluate(&y);
                e.in_domain && e.region == p.evaluate(&x).region
            })
        });
        let margin_ok = match p {
            Problem::MaxEig(q) => {
                let ev = q.eigenvalues(&x);
                ev[0] - ev[1] > 1e-3
            }
            _ => true,
        };
        if stencil_ok && margin_ok {
            out.push(x);
        }
    }
    out
}

#[test]
fn finite_difference_spot_check() {
    for family in [Family::MaxQuart, Family::EucSum, Family::MaxEig] {
        let p = Problem::generate(family, 6, 3, 5, 21).unwrap();
        for x in smooth_points(&p, 10, 3) {
            let (g, h) = derivative_errors(&p, &x);
            assert!(g < 1e-5, "{family} gradient error {g:e}");
            assert!(h < 1e-3, "{family} hessian error {h:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn labels_stable_under_small_perturbations(seed in any::<u64>(), dir in prop::collection::vec(-1.0..1.0f64, 6)) {
        let p = MaxQuartProblem::generate(6, 4, seed % 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_point(&mut rng, 6, 0.5);
        let values = p.pieces.piece_values(&x);
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let gap = sorted[0] - sorted[1];
        prop_assume!(p.region(&x).is_some());
        // Perturb by a step whose effect on every piece is below half the gap.
        let d = DVector::from_vec(dir);
        prop_assume!(d.norm() > 1e-3);
        let lip = (0..4)
            .map(|i| p.pieces.piece_gradient(i, &x).norm() + 10.0)
            .fold(0.0, f64::max);
        let step = 0.25 * gap / lip;
        let y = &x + d.normalize() * step.min(1e-3);
        prop_assert_eq!(p.region(&y), p.region(&x));
    }
}
