use cbo_bench::{objective_training, region, seeded_state};
use cbo_core::constraints::solve_multipliers;
use cbo_core::gp::{fit_auto, DEFAULT_CONDMAX};
use cbo_core::optimizer::{fit_surrogates, propose};
use cbo_core::problems;
use cbo_core::{BoConfig, ConstraintEval, GpModel, HyperSearch, KernelParams, Method};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::{DMatrix, DVector};
use std::hint::black_box;

fn gp(c: &mut Criterion) {
    let mut g = c.benchmark_group("gp");
    for n_d in [2, 5, 10] {
        let tp = problems::make_rosenbrock(n_d, 100.0).unwrap();
        let t = objective_training(&tp, 20, 0);
        let params = KernelParams::new(DVector::from_element(n_d, 1.0)).unwrap();
        g.bench_function(format!("fit_fixed_d{n_d}"), |b| {
            b.iter(|| GpModel::fit(black_box(t.clone()), params.clone(), DEFAULT_CONDMAX).unwrap())
        });
        g.bench_function(format!("fit_hyper_d{n_d}"), |b| {
            b.iter(|| fit_auto(black_box(t.clone()), DEFAULT_CONDMAX, &HyperSearch::default()).unwrap())
        });
        let model = GpModel::fit(t.clone(), params, DEFAULT_CONDMAX).unwrap();
        let x = vec![0.1; n_d];
        g.bench_function(format!("posterior_d{n_d}"), |b| {
            b.iter(|| model.posterior(black_box(&x)))
        });
        g.bench_function(format!("mean_hessian_d{n_d}"), |b| {
            b.iter(|| model.mean_hessian(black_box(&x)))
        });
    }
    g.finish();
}

fn multipliers(c: &mut Criterion) {
    let n_d = 10;
    let k = 8;
    let eval = ConstraintEval {
        g_vals: DVector::from_fn(k, |i, _| -0.05 + 0.01 * i as f64),
        g_grads: DMatrix::from_fn(k, n_d, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0),
        h_vals: DVector::from_element(2, 0.01),
        h_grads: DMatrix::from_fn(2, n_d, |i, j| ((i + j) % 3) as f64 - 1.0),
    };
    let f_grad = DVector::from_fn(n_d, |i, _| 1.0 - 0.2 * i as f64);
    c.bench_function("multipliers_d10_k10", |b| {
        b.iter(|| solve_multipliers(black_box(&eval), &f_grad, 100.0, 100.0).unwrap())
    });
}

fn bo_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("bo_step");
    g.sample_size(10);
    for method in [Method::Strong, Method::ExactLagrangian] {
        for name in ["quad", "prod"] {
            let tp = problems::by_name(name, 5).unwrap();
            let config = BoConfig {
                method,
                ..Default::default()
            };
            let state = seeded_state(&tp, 12, &config);
            g.bench_function(format!("{}_{name}_d5", method.name()), |b| {
                b.iter_batched(
                    || state.clone(),
                    |mut s| propose(&mut s, &tp.problem, &config).unwrap(),
                    BatchSize::SmallInput,
                )
            });
        }
    }
    let tp = problems::by_name("quad", 5).unwrap();
    let config = BoConfig::default();
    let state = seeded_state(&tp, 20, &config);
    let r = region(&state, &config);
    g.bench_function("fit_surrogates_quad_d5", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| fit_surrogates(&mut s, &r, &config).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, gp, multipliers, bo_step);
criterion_main!(benches);
