use cbo_core::gp::{
    build_grad_kernel_matrix, fit_beta_sigk2, hyper_bounds, log_marginal_likelihood, log_marginal_likelihood_grad,
    precondition, select_hyperparameters, DEFAULT_CONDMAX,
};
use cbo_core::sampling::latin_hypercube;
use cbo_core::{GpModel, HyperSearch, KernelParams, TrainingSet};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_training(rng: &mut ChaCha8Rng, n_x: usize, n_d: usize, span: f64) -> TrainingSet {
    let pts: Vec<DVector<f64>> = (0..n_x)
        .map(|_| DVector::from_fn(n_d, |_, _| rng.gen_range(0.0..span)))
        .collect();
    let vals: Vec<f64> = pts.iter().map(|p| p.iter().map(|v| v.sin()).sum()).collect();
    let grads: Vec<DVector<f64>> = pts.iter().map(|p| p.map(f64::cos)).collect();
    TrainingSet::from_points(&pts, &vals, &grads).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, n_d: usize, lo: f64, hi: f64) -> KernelParams {
    KernelParams::new(DVector::from_fn(n_d, |_, _| rng.gen_range(lo..hi))).unwrap()
}

fn kc_condition(t: &TrainingSet, params: &KernelParams) -> f64 {
    let kg = build_grad_kernel_matrix(t.x(), params).unwrap();
    let (kc, _) = oracle_nugget(&kg, &preconditioner_of(params, t.n_points()));
    let e = kc.symmetric_eigen().eigenvalues;
    e.max() / e.min().abs()
}

/// Draws data and hyperparameters until the unregularized correlation matrix
/// has condition number at most 1e8. Rounding error in any dense solve grows
/// like cond * eps, so tight oracle comparisons only make sense here.
fn well_conditioned(
    rng: &mut ChaCha8Rng,
    n_x: usize,
    n_d: usize,
    span: f64,
    gamma: (f64, f64),
) -> (TrainingSet, KernelParams) {
    loop {
        let t = random_training(rng, n_x, n_d, span);
        let params = random_params(rng, n_d, gamma.0, gamma.1);
        if kc_condition(&t, &params) <= 1e8 {
            return (t, params);
        }
    }
}

/// Gershgorin-based nugget recomputed from scratch on the unscaled matrix.
fn oracle_nugget(kg: &DMatrix<f64>, p: &DVector<f64>) -> (DMatrix<f64>, f64) {
    let m = kg.nrows();
    let kc = DMatrix::from_fn(m, m, |i, j| kg[(i, j)] / (p[i] * p[j]));
    let rmax = (0..m)
        .map(|i| kc.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    (kc, rmax / (DEFAULT_CONDMAX - 1.0))
}

fn preconditioner_of(params: &KernelParams, n_x: usize) -> DVector<f64> {
    let n_d = params.dim();
    DVector::from_fn(n_x * (n_d + 1), |r, _| {
        let block = r / n_x;
        if block == 0 {
            1.0
        } else {
            params.gamma()[block - 1]
        }
    })
}

/// Dense reference: likelihood from an eigendecomposition of the
/// regularized correlation matrix in scaled coordinates.
fn dense_likelihood(training: &TrainingSet, params: &KernelParams) -> f64 {
    let n_x = training.n_points();
    let n_d = training.dim();
    let m = n_x * (n_d + 1);
    let kg = build_grad_kernel_matrix(training.x(), params).unwrap();
    let p = preconditioner_of(params, n_x);
    let (kc, eta) = oracle_nugget(&kg, &p);
    let ksc = kc + DMatrix::identity(m, m) * eta;
    let eig = ksc.clone().symmetric_eigen();
    let inv =
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * eig.eigenvectors.transpose();
    let y = training.f_grad().component_div(&p);
    let e = DVector::from_fn(m, |r, _| if r < n_x { 1.0 } else { 0.0 });
    let beta = e.dot(&(&inv * &y)) / e.dot(&(&inv * &e));
    let r = &y - &e * beta;
    let sig = r.dot(&(&inv * &r)) / m as f64;
    let logdet: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
    let sum_theta: f64 = params.log_gamma().iter().sum();
    -(m as f64) / 2.0 * sig.ln() - 0.5 * logdet - n_x as f64 * sum_theta
}

#[test]
fn kernel_matrix_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n_x = rng.gen_range(1..8);
        let n_d = rng.gen_range(1..5);
        let t = random_training(&mut rng, n_x, n_d, 3.0);
        let params = random_params(&mut rng, n_d, 0.2, 3.0);
        let kg = build_grad_kernel_matrix(t.x(), &params).unwrap();
        let scale = kg.amax();
        assert!((&kg - kg.transpose()).amax() <= 1e-14 * scale);
    }
}

#[test]
fn preconditioned_condition_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n_x = rng.gen_range(1..11);
        let n_d = rng.gen_range(1..5);
        let t = random_training(&mut rng, n_x, n_d, 2.0);
        let params = random_params(&mut rng, n_d, 0.05, 20.0);
        let model = GpModel::fit(t, params, DEFAULT_CONDMAX).unwrap();
        let eig = model.preconditioned_matrix().symmetric_eigen().eigenvalues;
        let ratio = eig.max() / eig.min();
        // The eigensolver's absolute error near the smallest eigenvalue is
        // about eps * ||K||, roughly 1e-5 of the nugget at this condmax.
        assert!(
            eig.min() > 0.0 && ratio <= DEFAULT_CONDMAX * (1.0 + 1e-3),
            "ratio {ratio:e}"
        );
    }
}

#[test]
fn precondition_matches_oracle_nugget() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let n_x = rng.gen_range(1..6);
        let n_d = rng.gen_range(1..4);
        let t = random_training(&mut rng, n_x, n_d, 2.0);
        let params = random_params(&mut rng, n_d, 0.3, 4.0);
        let kg = build_grad_kernel_matrix(t.x(), &params).unwrap();
        let pre = precondition(&kg, DEFAULT_CONDMAX).unwrap();
        let p = preconditioner_of(&params, n_x);
        let (_, eta) = oracle_nugget(&kg, &p);
        assert!((pre.eta - eta).abs() <= 1e-12 * eta);
    }
}

#[test]
fn likelihood_matches_dense_eigen_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..40 {
        let n_x = rng.gen_range(1..6);
        let n_d = rng.gen_range(1..3);
        let (t, params) = well_conditioned(&mut rng, n_x, n_d, 3.0, (0.5, 2.0));
        let ours = log_marginal_likelihood(&params, &t, DEFAULT_CONDMAX).unwrap();
        let oracle = dense_likelihood(&t, &params);
        assert!(
            (ours - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
            "{ours} vs {oracle}"
        );
    }
}

#[test]
fn likelihood_near_oracle_when_nugget_dominates() {
    // Clustered points push the regularized matrix to condmax, where both
    // computations carry errors of order condmax * eps.
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..40 {
        let n_x = rng.gen_range(2..6);
        let n_d = rng.gen_range(1..3);
        let t = random_training(&mut rng, n_x, n_d, 0.5);
        let params = random_params(&mut rng, n_d, 0.5, 2.0);
        let ours = log_marginal_likelihood(&params, &t, DEFAULT_CONDMAX).unwrap();
        let oracle = dense_likelihood(&t, &params);
        assert!(
            (ours - oracle).abs() <= 1e-5 * (1.0 + oracle.abs()),
            "{ours} vs {oracle}"
        );
    }
}

#[test]
fn beta_and_sigma_match_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n_x = rng.gen_range(2..6);
        let n_d = rng.gen_range(1..3);
        let (t, params) = well_conditioned(&mut rng, n_x, n_d, 3.0, (0.5, 2.0));
        let model = GpModel::fit(t.clone(), params.clone(), DEFAULT_CONDMAX).unwrap();
        let m = n_x * (n_d + 1);
        let kg = build_grad_kernel_matrix(t.x(), &params).unwrap();
        let p = preconditioner_of(&params, n_x);
        let (kc, eta) = oracle_nugget(&kg, &p);
        let inv = (kc + DMatrix::identity(m, m) * eta).try_inverse().unwrap();
        let y = t.f_grad().component_div(&p);
        let e = DVector::from_fn(m, |r, _| if r < n_x { 1.0 } else { 0.0 });
        let beta = e.dot(&(&inv * &y)) / e.dot(&(&inv * &e));
        let r = &y - &e * beta;
        let sig = r.dot(&(&inv * &r)) / m as f64;
        assert!((model.beta() - beta).abs() <= 1e-8 * (1.0 + beta.abs()));
        assert!((model.sig_k2() - sig).abs() <= 1e-8 * sig);

        let pre = precondition(&kg, DEFAULT_CONDMAX).unwrap();
        let (b2, s2) = fit_beta_sigk2(&t, &params, pre.eta, &pre.w, &pre.p).unwrap();
        assert!((b2 - model.beta()).abs() <= 1e-8 * (1.0 + beta.abs()));
        assert!((s2 - model.sig_k2()).abs() <= 1e-8 * sig);
    }
}

#[test]
fn likelihood_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let n_x = rng.gen_range(2..7);
        let n_d = rng.gen_range(1..4);
        let (t, params) = well_conditioned(&mut rng, n_x, n_d, 3.0, (0.4, 3.0));
        let (_, grad) = log_marginal_likelihood_grad(&params, &t, DEFAULT_CONDMAX).unwrap();
        let theta = params.log_gamma();
        let h = 1e-6;
        for i in 0..n_d {
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let lp = log_marginal_likelihood(&KernelParams::from_log(&tp).unwrap(), &t, DEFAULT_CONDMAX).unwrap();
            let lm = log_marginal_likelihood(&KernelParams::from_log(&tm).unwrap(), &t, DEFAULT_CONDMAX).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-4 * grad.amax().max(1.0),
                "fd {fd} an {}",
                grad[i]
            );
        }
    }
}

#[test]
fn constant_data_preferred_over_oscillating() {
    let params = KernelParams::from_slice(&[1.0]).unwrap();
    let pts: Vec<DVector<f64>> = [0.0, 0.7, 1.5, 2.2, 3.0]
        .iter()
        .map(|&v| DVector::from_element(1, v))
        .collect();
    let zero: Vec<DVector<f64>> = pts.iter().map(|_| DVector::zeros(1)).collect();
    let flat = TrainingSet::from_points(&pts, &[1.0, 1.0, 1.0, 1.0, 1.0], &zero).unwrap();
    let vals: Vec<f64> = pts.iter().map(|p| (5.0 * p[0]).sin()).collect();
    let grads: Vec<DVector<f64>> = pts
        .iter()
        .map(|p| DVector::from_element(1, 5.0 * (5.0 * p[0]).cos()))
        .collect();
    let wiggly = TrainingSet::from_points(&pts, &vals, &grads).unwrap();
    let lf = log_marginal_likelihood(&params, &flat, DEFAULT_CONDMAX).unwrap();
    let lw = log_marginal_likelihood(&params, &wiggly, DEFAULT_CONDMAX).unwrap();
    assert!(lf > lw);
}

#[test]
fn selected_hyperparameters_beat_every_candidate() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = random_training(&mut rng, 8, 2, 3.0);
    let search = HyperSearch {
        seed: 11,
        ..Default::default()
    };
    let chosen = select_hyperparameters(&t, DEFAULT_CONDMAX, &search).unwrap();
    let best = log_marginal_likelihood(&chosen, &t, DEFAULT_CONDMAX).unwrap();
    let (lo, hi) = hyper_bounds(&t, &search);
    let cands = latin_hypercube(search.n_starts, &lo, &hi, &mut ChaCha8Rng::seed_from_u64(search.seed));
    for c in cands {
        let l = log_marginal_likelihood(&KernelParams::from_log(&c).unwrap(), &t, DEFAULT_CONDMAX).unwrap();
        assert!(best >= l - 1e-9 * l.abs().max(1.0));
    }
    for i in 0..2 {
        let th = chosen.log_gamma()[i];
        assert!(th >= lo[i] - 1e-12 && th <= hi[i] + 1e-12);
    }
}

#[test]
fn recovers_length_scale_of_gp_sample() {
    // Draw values and gradients jointly from a prior with gamma = 2.
    let gamma_true = 2.0;
    let truth = KernelParams::from_slice(&[gamma_true]).unwrap();
    let mut hits = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let xs: Vec<f64> = (0..15).map(|_| rng.gen_range(0.0..5.0)).collect();
        let x = DMatrix::from_fn(15, 1, |a, _| xs[a]);
        let kg = build_grad_kernel_matrix(&x, &truth).unwrap();
        let m = kg.nrows();
        let jitter = 1e-10 * kg.amax();
        let l = (kg + DMatrix::identity(m, m) * jitter).cholesky().unwrap().unpack();
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let sample = l * z;
        let t = TrainingSet::new(x, sample).unwrap();
        let chosen = select_hyperparameters(
            &t,
            DEFAULT_CONDMAX,
            &HyperSearch {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let g = chosen.gamma()[0];
        if g >= gamma_true / 2.0 && g <= gamma_true * 2.0 {
            hits += 1;
        }
    }
    assert!(hits >= 4, "only {hits}/5 samples recovered gamma within a factor of 2");
}

#[test]
fn posterior_interpolates_training_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let n_x = rng.gen_range(2..8);
        let n_d = rng.gen_range(1..4);
        let (t, params) = well_conditioned(&mut rng, n_x, n_d, 3.0, (0.5, 2.0));
        let model = GpModel::fit(t.clone(), params, DEFAULT_CONDMAX).unwrap();
        let fscale = t.f_grad().amax().max(1.0);
        for a in 0..n_x {
            let post = model.posterior(&t.point(a));
            assert!((post.mu - t.values()[a]).abs() <= 1e-6 * fscale);
            let g = t.gradient(a);
            assert!((&post.mu_grad - &g).amax() <= 1e-3 * fscale);
            assert!(post.var_ratio_raw >= -1e-8);
            assert!(post.var_ratio <= 1e-6);
        }
    }
}

#[test]
fn far_field_reverts_to_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = random_training(&mut rng, 6, 2, 1.0);
    let params = KernelParams::from_slice(&[1.0, 1.0]).unwrap();
    let model = GpModel::fit(t, params, DEFAULT_CONDMAX).unwrap();
    let post = model.posterior(&[100.0, -100.0]);
    assert!((post.mu - model.beta()).abs() <= 1e-10 * (1.0 + model.beta().abs()));
    assert!((post.var - model.sig_k2()).abs() <= 1e-10 * model.sig_k2());
}

#[test]
fn refit_on_own_predictions_keeps_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let t = random_training(&mut rng, 6, 2, 3.0);
    let params = KernelParams::from_slice(&[0.8, 1.2]).unwrap();
    let model = GpModel::fit(t.clone(), params.clone(), DEFAULT_CONDMAX).unwrap();
    let pts: Vec<DVector<f64>> = (0..6).map(|a| DVector::from_vec(t.point(a))).collect();
    let posts: Vec<_> = pts.iter().map(|p| model.posterior(p.as_slice())).collect();
    let vals: Vec<f64> = posts.iter().map(|p| p.mu).collect();
    let grads: Vec<DVector<f64>> = posts.iter().map(|p| p.mu_grad.clone()).collect();
    let again = GpModel::fit(
        TrainingSet::from_points(&pts, &vals, &grads).unwrap(),
        params,
        DEFAULT_CONDMAX,
    )
    .unwrap();
    assert!((again.sig_k2() - model.sig_k2()).abs() <= 1e-6 * model.sig_k2());
}

#[test]
fn posterior_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n_d = rng.gen_range(1..4);
        let t = random_training(&mut rng, 6, n_d, 3.0);
        let params = random_params(&mut rng, n_d, 0.5, 1.5);
        let model = GpModel::fit(t, params, DEFAULT_CONDMAX).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..n_d).map(|_| rng.gen_range(0.0..3.0)).collect();
            let post = model.posterior(&x);
            if post.var_ratio_raw < 1e-4 {
                continue;
            }
            let h = 1e-6;
            for i in 0..n_d {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let (pp, pm) = (model.posterior(&xp), model.posterior(&xm));
                let fd_mu = (pp.mu - pm.mu) / (2.0 * h);
                let fd_var = (pp.var - pm.var) / (2.0 * h);
                let mu_scale = post.mu_grad.amax().max(1e-2);
                let var_scale = post.var_grad.amax().max(1e-2 * model.sig_k2());
                assert!((fd_mu - post.mu_grad[i]).abs() <= 1e-5 * mu_scale.max(1.0));
                assert!((fd_var - post.var_grad[i]).abs() <= 1e-5 * var_scale.max(1.0));
            }
        }
    }
}

#[test]
fn mean_hessian_matches_gradient_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let t = random_training(&mut rng, 7, 3, 3.0);
    let params = KernelParams::from_slice(&[0.7, 1.1, 0.9]).unwrap();
    let model = GpModel::fit(t, params, DEFAULT_CONDMAX).unwrap();
    for _ in 0..10 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..3.0)).collect();
        let (mu, grad, hess) = model.mean_hessian(&x);
        let post = model.posterior(&x);
        assert!((mu - post.mu).abs() <= 1e-12 * (1.0 + mu.abs()));
        assert!((&grad - &post.mu_grad).amax() <= 1e-12 * (1.0 + grad.amax()));
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (model.posterior(&xp).mu_grad - model.posterior(&xm).mu_grad) / (2.0 * h);
            assert!((fd - hess.column(i)).amax() <= 1e-5 * hess.amax().max(1.0));
        }
    }
}

#[test]
fn duplicate_points_rejected() {
    let p = DVector::from_vec(vec![0.5, 0.5]);
    let err = TrainingSet::from_points(&[p.clone(), p.clone()], &[1.0, 1.0], &[p.clone(), p]);
    assert!(err.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn likelihood_permutation_invariant(seed in 0u64..1000, n_x in 2usize..6, n_d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, params) = well_conditioned(&mut rng, n_x, n_d, 3.0, (0.3, 3.0));
        let mut order: Vec<usize> = (0..n_x).collect();
        order.reverse();
        order.rotate_left(seed as usize % n_x);
        let pts: Vec<DVector<f64>> = order.iter().map(|&a| DVector::from_vec(t.point(a))).collect();
        let vals: Vec<f64> = order.iter().map(|&a| t.values()[a]).collect();
        let grads: Vec<DVector<f64>> = order.iter().map(|&a| t.gradient(a)).collect();
        let permuted = TrainingSet::from_points(&pts, &vals, &grads).unwrap();
        let a = log_marginal_likelihood(&params, &t, DEFAULT_CONDMAX).unwrap();
        let b = log_marginal_likelihood(&params, &permuted, DEFAULT_CONDMAX).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
    }

    #[test]
    fn posterior_variance_nonnegative(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_d = rng.gen_range(1..4);
        let t = random_training(&mut rng, 6, n_d, 2.0);
        let params = random_params(&mut rng, n_d, 0.1, 10.0);
        let model = GpModel::fit(t.clone(), params, DEFAULT_CONDMAX).unwrap();
        for a in 0..6 {
            prop_assert!(model.posterior(&t.point(a)).var_ratio_raw >= -1e-8);
        }
        for _ in 0..10 {
            let x: Vec<f64> = (0..n_d).map(|_| rng.gen_range(-1.0..3.0)).collect();
            let p = model.posterior(&x);
            prop_assert!(p.var_ratio_raw >= -1e-8 && p.var >= 0.0 && p.var_ratio <= 1.0);
        }
    }
}
