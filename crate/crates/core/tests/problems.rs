use cbo_core::constraints::merit_exact_aug_lagrangian;
use cbo_core::constraints::MERIT_RHO;
use cbo_core::problems::{self, min_eigenpair, quadratic_matrix};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_fd(name: &str, x: &[f64], f: &dyn Fn(&[f64]) -> (f64, DVector<f64>)) {
    let (_, g) = f(x);
    let h = 1e-6;
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut xm = x.to_vec();
        xm[i] -= h;
        let fd = (f(&xp).0 - f(&xm).0) / (2.0 * h);
        let scale = g.amax().max(1.0);
        assert!(
            (fd - g[i]).abs() <= 1e-6 * scale,
            "{name} component {i}: fd {fd} vs {}",
            g[i]
        );
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for name in problems::PROBLEM_NAMES {
        for n_d in [2, 5] {
            let tp = problems::by_name(name, n_d).unwrap();
            let p = &tp.problem;
            for _ in 0..100 {
                let x: Vec<f64> = (0..n_d).map(|i| rng.gen_range(p.lb[i]..p.ub[i])).collect();
                check_fd(name, &x, &*p.objective);
                for g in &p.g {
                    check_fd(name, &x, &**g);
                }
                for h in &p.h {
                    check_fd(name, &x, &**h);
                }
            }
        }
    }
}

#[test]
fn quadratic_eigenpair_residual() {
    for n_d in [2, 5, 10, 20] {
        let a = quadratic_matrix(n_d);
        let (lam, u) = min_eigenpair(&a);
        assert!((&a * &u - &u * lam).amax() <= 1e-12);
        assert!((u.norm() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn quadratic_is_reflection_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n_d in [2, 5] {
        let tp = problems::make_quadratic(n_d).unwrap();
        let p = &tp.problem;
        for _ in 0..50 {
            let x: Vec<f64> = (0..n_d).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let xm: Vec<f64> = x.iter().map(|v| -v).collect();
            assert!(((p.objective)(&x).0 - (p.objective)(&xm).0).abs() <= 1e-12);
            assert!(((p.g[0])(&x).0 - (p.g[0])(&xm).0).abs() <= 1e-12);
        }
        let plus = merit_exact_aug_lagrangian(p, &tp.optimum, MERIT_RHO).unwrap();
        let minus = merit_exact_aug_lagrangian(p, &(-&tp.optimum), MERIT_RHO).unwrap();
        assert!(plus.abs() <= 1e-8 && minus.abs() <= 1e-8);
    }
}

#[test]
fn product_and_rosenbrock_optima() {
    for n_d in [2, 3, 5, 10] {
        let prod = problems::make_product(n_d).unwrap();
        let rec = prod.problem.evaluate(&prod.optimum).unwrap();
        assert!(rec.f.abs() <= 1e-12);
        assert!(rec.constraints.h_vals[0].abs() <= 1e-12);

        let rosen = problems::make_rosenbrock(n_d, 100.0).unwrap();
        let rec = rosen.problem.evaluate(&rosen.optimum).unwrap();
        assert_eq!(rec.f, 0.0);
        assert!(rec.f_grad.amax() == 0.0);
        assert!(rec.constraints.g_vals[0].abs() <= 1e-12);
    }
}

#[test]
fn unknown_and_degenerate_problems_rejected() {
    assert!(problems::by_name("nope", 2).is_err());
    assert!(problems::by_name("quad", 1).is_err());
    assert!(problems::make_rosenbrock(3, 0.0).is_err());
}
