//! Shared fixtures for the benchmarks.

use cbo_core::optimizer::{select_data_region, BoState};
use cbo_core::problems::TestProblem;
use cbo_core::sampling::latin_hypercube;
use cbo_core::{BoConfig, EvalRecord, TrainingSet, TrustState};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Objective values and gradients of `tp` at `n` Latin hypercube points.
pub fn objective_training(tp: &TestProblem, n: usize, seed: u64) -> TrainingSet {
    let recs = records(tp, n, seed);
    let pts: Vec<DVector<f64>> = recs.iter().map(|r| r.x.clone()).collect();
    let vals: Vec<f64> = recs.iter().map(|r| r.f).collect();
    let grads: Vec<DVector<f64>> = recs.iter().map(|r| r.f_grad.clone()).collect();
    TrainingSet::from_points(&pts, &vals, &grads).expect("distinct design points")
}

pub fn records(tp: &TestProblem, n: usize, seed: u64) -> Vec<EvalRecord> {
    let p = &tp.problem;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    latin_hypercube(n, p.lb.as_slice(), p.ub.as_slice(), &mut rng)
        .iter()
        .map(|x| p.evaluate(x).expect("in-domain point"))
        .collect()
}

/// Optimizer state holding `n` evaluated design points.
pub fn seeded_state(tp: &TestProblem, n: usize, config: &BoConfig) -> BoState {
    let p = &tp.problem;
    let mut state = BoState::new(TrustState::initial(&p.lb, &p.ub, &config.trust));
    for rec in records(tp, n, 1) {
        let m = cbo_core::constraints::exact_merit_of_record(p, &rec, cbo_core::constraints::MERIT_RHO)
            .expect("finite merit");
        state.push(rec, m);
    }
    state
}

pub fn region(state: &BoState, config: &BoConfig) -> Vec<usize> {
    let xs: Vec<DVector<f64>> = state.history.iter().map(|r| r.x.clone()).collect();
    select_data_region(&xs, state.best_index, config.data_region_size, config.min_recent)
}
