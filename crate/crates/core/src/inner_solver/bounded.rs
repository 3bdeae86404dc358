//! Projected BFGS for smooth minimization over a box.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxOptions {
    pub max_iter: usize,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when the objective improves by less than `rel_tol * max(1, |f|)`
    /// on two consecutive iterations.
    pub rel_tol: f64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-10,
            rel_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project(x: &mut DVector<f64>, lb: &[f64], ub: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lb[i], ub[i]);
    }
}

fn projected_gradient_norm(x: &DVector<f64>, g: &DVector<f64>, lb: &[f64], ub: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(lb[i], ub[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `f` over `lb <= x <= ub`. `f` returns the value and gradient.
///
/// Variables sitting on a bound with the gradient pointing outward are frozen
/// for the step; the remaining ones follow the BFGS direction restricted to
/// the free subspace, with an Armijo backtracking search along the projected
/// path. Non-finite objective values are treated as rejected trial points.
pub fn minimize_box<F>(mut f: F, x0: &DVector<f64>, lb: &[f64], ub: &[f64], opts: &BoxOptions) -> BoxResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0.clone();
    project(&mut x, lb, ub);
    let (mut fx, mut gx) = f(&x);
    let mut evaluations = 1;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh_h = true;
    let mut stalls = 0;
    let mut converged = false;
    let mut iterations = 0;

    if !fx.is_finite() || gx.iter().any(|v| !v.is_finite()) {
        return BoxResult {
            x,
            value: fx,
            gradient: gx,
            iterations,
            evaluations,
            converged,
        };
    }

    while iterations < opts.max_iter {
        if projected_gradient_norm(&x, &gx, lb, ub) <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let span = |i: usize| (ub[i] - lb[i]).abs().max(1.0);
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lb = x[i] <= lb[i] + 1e-14 * span(i) && gx[i] > 0.0;
                let at_ub = x[i] >= ub[i] - 1e-14 * span(i) && gx[i] < 0.0;
                !(at_lb || at_ub)
            })
            .collect();

        let mut dir = DVector::zeros(n);
        for i in (0..n).filter(|&i| free[i]) {
            dir[i] = -(0..n).filter(|&j| free[j]).map(|j| h[(i, j)] * gx[j]).sum::<f64>();
        }
        let mut slope = dir.dot(&gx);
        if !(slope < 0.0) {
            h.fill_with_identity();
            fresh_h = true;
            for i in 0..n {
                dir[i] = if free[i] { -gx[i] } else { 0.0 };
            }
            slope = dir.dot(&gx);
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }

        let mut t = 1.0;
        if fresh_h {
            // First step along the raw gradient: keep it from leaving the box scale.
            let dn = dir.amax();
            let scale = (0..n).map(span).fold(f64::INFINITY, f64::min);
            if dn > 0.0 && dn * t > 0.1 * scale {
                t = 0.1 * scale / dn;
            }
        }

        let mut accepted = None;
        for _ in 0..50 {
            let mut trial = &x + &dir * t;
            project(&mut trial, lb, ub);
            let step = &trial - &x;
            if step.amax() == 0.0 {
                break;
            }
            let (ft, gt) = f(&trial);
            evaluations += 1;
            let decrease = gx.dot(&step);
            if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + 1e-4 * decrease.min(0.0) {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }

        let Some((xn, fn_, gn)) = accepted else {
            if fresh_h {
                converged = true;
                break;
            }
            h.fill_with_identity();
            fresh_h = true;
            continue;
        };

        let s = &xn - &x;
        let y = &gn - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh_h {
                // Shanno-Phua scaling of the initial inverse Hessian.
                h *= sy / y.norm_squared();
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 yhy + rho) s s'
            h.ger(-rho, &s, &hy, 1.0);
            h.ger(-rho, &hy, &s, 1.0);
            h.ger(rho * rho * yhy + rho, &s, &s, 1.0);
            fresh_h = false;
        }

        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        gx = gn;
        if improvement <= opts.rel_tol * fx.abs().max(1.0) {
            stalls += 1;
            if stalls >= 2 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }

    BoxResult {
        x,
        value: fx,
        gradient: gx,
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosen(x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = 100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2);
        let g = DVector::from_vec(vec![-400.0 * a * (b - a * a) - 2.0 * (1.0 - a), 200.0 * (b - a * a)]);
        (f, g)
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let opts = BoxOptions {
            max_iter: 500,
            ..Default::default()
        };
        let r = minimize_box(rosen, &DVector::from_vec(vec![-1.2, 1.0]), &[-5.0; 2], &[5.0; 2], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{:?}", r);
        assert!((r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn active_bound() {
        // min (x - 3)^2 + (y + 1)^2 on [0, 1]^2 -> (1, 0)
        let f = |x: &DVector<f64>| {
            (
                (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2),
                DVector::from_vec(vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]),
            )
        };
        let r = minimize_box(
            f,
            &DVector::from_vec(vec![0.5, 0.5]),
            &[0.0; 2],
            &[1.0; 2],
            &BoxOptions::default(),
        );
        assert!(r.converged);
        assert_eq!(r.x[0], 1.0);
        assert_eq!(r.x[1], 0.0);
    }

    #[test]
    fn start_at_optimum_stays() {
        let f = |x: &DVector<f64>| (x.norm_squared(), 2.0 * x);
        let r = minimize_box(f, &DVector::zeros(3), &[-1.0; 3], &[1.0; 3], &BoxOptions::default());
        assert_eq!(r.x, DVector::zeros(3));
        assert_eq!(r.iterations, 0);
    }
}
