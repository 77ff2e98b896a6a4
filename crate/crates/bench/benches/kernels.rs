//! Timings for the optimality measure, the two subproblem solves, one
//! proximal cutting-plane step and a full bundle Newton run.

use std::hint::black_box;

use bundle_newton::pipeline::{run_pipeline, PipelineConfig};
use bundle_newton::{
    build_constraints, run_convex, solve_kkt_full, solve_kkt_reduced, solve_proximal_cut_qp, theta,
    Bundle, DVector, Family, LinearModel, MaxQuartProblem, NewtonConfig, NewtonSubproblem, Problem,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bundle_near_minimizer(n: usize, k: usize) -> (MaxQuartProblem, Bundle) {
    let p = MaxQuartProblem::generate(n, k, 0).unwrap();
    let bundle = Bundle::evaluate(&p, &p.full_bundle(1e-2).unwrap()).unwrap();
    (p, bundle)
}

fn subproblem(bundle: &Bundle) -> NewtonSubproblem {
    let lambda = theta(&bundle.gradients()).unwrap().lambda;
    NewtonSubproblem::from_samples(lambda, bundle.samples()).unwrap()
}

fn bench_theta(c: &mut Criterion) {
    let mut group = c.benchmark_group("theta");
    for (n, k) in [(10, 4), (50, 21)] {
        let (_, bundle) = bundle_near_minimizer(n, k);
        let gradients = bundle.gradients();
        group.bench_with_input(BenchmarkId::from_parameter(format!("n{n}-k{k}")), &gradients, |b, g| {
            b.iter(|| theta(black_box(g)).unwrap())
        });
    }
    group.finish();
}

fn bench_kkt(c: &mut Criterion) {
    let mut group = c.benchmark_group("kkt");
    for (n, k) in [(10, 4), (50, 21)] {
        let (_, bundle) = bundle_near_minimizer(n, k);
        let sub = subproblem(&bundle);
        let id = format!("n{n}-k{k}");
        group.bench_with_input(BenchmarkId::new("full", &id), &sub, |b, s| {
            b.iter(|| solve_kkt_full(black_box(s)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("reduced-projected", &id), &sub, |b, s| {
            b.iter(|| {
                let reduced = build_constraints(black_box(s)).unwrap();
                solve_kkt_reduced(s, &reduced, true).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_prox(c: &mut Criterion) {
    let (_, bundle) = bundle_near_minimizer(10, 4);
    let cuts: Vec<LinearModel> = bundle
        .samples()
        .iter()
        .map(|s| LinearModel::new(s.value, s.gradient.clone(), s.point.clone()))
        .collect();
    let center = DVector::from_element(10, 0.05);
    c.bench_function("prox-cut-qp/n10-cuts4", |b| {
        b.iter(|| solve_proximal_cut_qp(black_box(&cuts), black_box(&center), 1.0).unwrap())
    });
}

fn bench_newton(c: &mut Criterion) {
    let (p, bundle) = bundle_near_minimizer(10, 4);
    let config = NewtonConfig { max_iterations: 40, ..NewtonConfig::default() };
    c.bench_function("run-convex/max-quart-n10-k4", |b| {
        b.iter(|| run_convex(&p, bundle.clone(), &config).unwrap())
    });
    let problem = Problem::generate(Family::MaxQuart, 10, 4, 0, 0).unwrap();
    let config = PipelineConfig::for_family(Family::MaxQuart);
    c.bench_function("pipeline/max-quart-n10-k4", |b| b.iter(|| run_pipeline(&problem, &config).unwrap()));
}

criterion_group!(benches, bench_theta, bench_kkt, bench_prox, bench_newton);
criterion_main!(benches);
