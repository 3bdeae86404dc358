use cbo_core::sampling::latin_hypercube;
use cbo_core::ConstrainedProblem;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded Latin-hypercube start points over the problem's box.
pub fn lhs_starts(problem: &ConstrainedProblem, n_runs: usize, seed: u64) -> Vec<DVector<f64>> {
    let lb: Vec<f64> = problem.lb.iter().copied().collect();
    let ub: Vec<f64> = problem.ub.iter().copied().collect();
    latin_hypercube(n_runs, &lb, &ub, &mut ChaCha8Rng::seed_from_u64(seed))
}
