//! Analytic constrained test problems with closed-form optima.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::constraints::{merit_exact_aug_lagrangian, ConstrainedProblem, ScalarFn, MERIT_RHO};
use crate::error::{CboError, Result};

/// A constrained problem with a known minimizer where the objective is zero.
#[derive(Debug, Clone)]
pub struct TestProblem {
    pub name: String,
    pub problem: ConstrainedProblem,
    /// One representative minimizer.
    pub optimum: DVector<f64>,
    /// Objective value at every minimizer.
    pub optimal_value: f64,
}

pub const PROBLEM_NAMES: [&str; 3] = ["quad", "prod", "rosen"];

fn check_dim(n_d: usize) -> Result<()> {
    if n_d < 2 {
        return Err(CboError::Input(format!("test problems need n_d >= 2, got {n_d}")));
    }
    Ok(())
}

fn norm_sq_constraint(offset: f64, sign: f64) -> ScalarFn {
    Arc::new(move |x: &[f64]| {
        let s: f64 = x.iter().map(|v| v * v).sum();
        (sign * (s - offset), DVector::from_fn(x.len(), |i, _| 2.0 * sign * x[i]))
    })
}

/// `a_ij = 0.1 exp(-(i - j)^2 / 2)`.
pub fn quadratic_matrix(n_d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_d, n_d, |i, j| {
        let d = i as f64 - j as f64;
        0.1 * (-0.5 * d * d).exp()
    })
}

/// Smallest eigenvalue of `a` and a unit eigenvector for it.
pub fn min_eigenpair(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let k = eig.eigenvalues.imin();
    (eig.eigenvalues[k], eig.eigenvectors.column(k).normalize())
}

/// `min x'Ax - r^2 lambda_min(A)` on `[-10, 10]^n_d` subject to `||x||^2 >= r^2`,
/// with `r = 2`. Minimizers are `+-2 u_min`.
pub fn make_quadratic(n_d: usize) -> Result<TestProblem> {
    make_quadratic_radius(n_d, 2.0)
}

pub fn make_quadratic_radius(n_d: usize, r: f64) -> Result<TestProblem> {
    check_dim(n_d)?;
    let a = quadratic_matrix(n_d);
    let (lam, u) = min_eigenpair(&a);
    let shift = r * r * lam;
    let am = a.clone();
    let objective: ScalarFn = Arc::new(move |x: &[f64]| {
        let xv = DVector::from_column_slice(x);
        let ax = &am * &xv;
        (xv.dot(&ax) - shift, ax * 2.0)
    });
    let problem = ConstrainedProblem::new(
        DVector::from_element(n_d, -10.0),
        DVector::from_element(n_d, 10.0),
        objective,
    )?
    .with_ineq(norm_sq_constraint(r * r, -1.0));
    Ok(TestProblem {
        name: "quad".into(),
        problem,
        optimum: u * r,
        optimal_value: 0.0,
    })
}

/// `min 1 - n_d^(n_d/2) prod x_i` on `[0, 1]^n_d` subject to `||x||^2 = 1`.
pub fn make_product(n_d: usize) -> Result<TestProblem> {
    check_dim(n_d)?;
    let scale = (n_d as f64).powf(n_d as f64 / 2.0);
    let objective: ScalarFn = Arc::new(move |x: &[f64]| {
        let p: f64 = x.iter().product();
        let grad = DVector::from_fn(x.len(), |i, _| {
            -scale
                * x.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, v)| v)
                    .product::<f64>()
        });
        (1.0 - scale * p, grad)
    });
    let problem = ConstrainedProblem::new(DVector::zeros(n_d), DVector::from_element(n_d, 1.0), objective)?
        .with_eq(norm_sq_constraint(1.0, 1.0));
    Ok(TestProblem {
        name: "prod".into(),
        problem,
        optimum: DVector::from_element(n_d, 1.0 / (n_d as f64).sqrt()),
        optimal_value: 0.0,
    })
}

/// Rosenbrock sum on `[-10, 10]^n_d` subject to `||x||^2 <= n_d`; minimizer `1`.
pub fn make_rosenbrock(n_d: usize, a: f64) -> Result<TestProblem> {
    check_dim(n_d)?;
    if !(a > 0.0) {
        return Err(CboError::Input(format!(
            "Rosenbrock coefficient must be positive, got {a}"
        )));
    }
    let objective: ScalarFn = Arc::new(move |x: &[f64]| {
        let n = x.len();
        let mut f = 0.0;
        let mut g = DVector::zeros(n);
        for i in 0..n - 1 {
            let t = x[i + 1] - x[i] * x[i];
            let s = 1.0 - x[i];
            f += a * t * t + s * s;
            g[i] += -4.0 * a * t * x[i] - 2.0 * s;
            g[i + 1] += 2.0 * a * t;
        }
        (f, g)
    });
    let problem = ConstrainedProblem::new(
        DVector::from_element(n_d, -10.0),
        DVector::from_element(n_d, 10.0),
        objective,
    )?
    .with_ineq(norm_sq_constraint(n_d as f64, 1.0));
    Ok(TestProblem {
        name: "rosen".into(),
        problem,
        optimum: DVector::from_element(n_d, 1.0),
        optimal_value: 0.0,
    })
}

/// Looks a problem up by registry name (`quad`, `prod`, `rosen`).
pub fn by_name(name: &str, n_d: usize) -> Result<TestProblem> {
    match name {
        "quad" => make_quadratic(n_d),
        "prod" => make_product(n_d),
        "rosen" => make_rosenbrock(n_d, 100.0),
        other => Err(CboError::Input(format!(
            "unknown problem '{other}', expected one of {}",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

/// Reporting merit at the closed-form optimum.
pub fn analytic_merit_at_optimum(tp: &TestProblem) -> Result<f64> {
    merit_exact_aug_lagrangian(&tp.problem, &tp.optimum, MERIT_RHO)
}
