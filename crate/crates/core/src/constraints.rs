//! Constrained problem model, merit functions and closed-form Lagrange
//! multipliers for the exact augmented Lagrangian.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{CboError, Result};

/// Value and gradient of a scalar function of the design point.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> (f64, DVector<f64>) + Send + Sync>;

/// Default activity threshold for inequality rows.
pub const ACTIVE_THRESHOLD: f64 = -0.1;
pub const DEFAULT_ALPHA: f64 = 100.0;
/// Penalty used by the reporting merit.
pub const MERIT_RHO: f64 = 100.0;

/// `min f(x)` over `lb <= x <= ub` subject to `Ag x <= bg`, `Ah x = bh`,
/// `g(x) <= 0` and `h(x) = 0`.
#[derive(Clone)]
pub struct ConstrainedProblem {
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    pub ag: DMatrix<f64>,
    pub bg: DVector<f64>,
    pub ah: DMatrix<f64>,
    pub bh: DVector<f64>,
    pub objective: ScalarFn,
    pub g: Vec<ScalarFn>,
    pub h: Vec<ScalarFn>,
}

impl fmt::Debug for ConstrainedProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstrainedProblem")
            .field("lb", &self.lb.as_slice())
            .field("ub", &self.ub.as_slice())
            .field("n_lin_g", &self.ag.nrows())
            .field("n_lin_h", &self.ah.nrows())
            .field("n_g", &self.g.len())
            .field("n_h", &self.h.len())
            .finish()
    }
}

impl ConstrainedProblem {
    pub fn new(lb: DVector<f64>, ub: DVector<f64>, objective: ScalarFn) -> Result<Self> {
        if lb.len() != ub.len() || lb.is_empty() {
            return Err(CboError::Input("bounds must be nonempty and of equal length".into()));
        }
        if let Some(i) = (0..lb.len()).find(|&i| !(lb[i] < ub[i]) || !lb[i].is_finite() || !ub[i].is_finite()) {
            return Err(CboError::Input(format!(
                "bound {i} is not a finite interval with lb < ub"
            )));
        }
        let n = lb.len();
        Ok(Self {
            lb,
            ub,
            ag: DMatrix::zeros(0, n),
            bg: DVector::zeros(0),
            ah: DMatrix::zeros(0, n),
            bh: DVector::zeros(0),
            objective,
            g: Vec::new(),
            h: Vec::new(),
        })
    }

    pub fn with_linear_ineq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return Err(CboError::Input("linear inequality shape mismatch".into()));
        }
        self.ag = a;
        self.bg = b;
        Ok(self)
    }

    pub fn with_linear_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.ncols() != self.dim() || a.nrows() != b.len() {
            return Err(CboError::Input("linear equality shape mismatch".into()));
        }
        self.ah = a;
        self.bh = b;
        Ok(self)
    }

    pub fn with_ineq(mut self, g: ScalarFn) -> Self {
        self.g.push(g);
        self
    }

    pub fn with_eq(mut self, h: ScalarFn) -> Self {
        self.h.push(h);
        self
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn n_g(&self) -> usize {
        self.g.len()
    }

    pub fn n_h(&self) -> usize {
        self.h.len()
    }

    /// Whether `x` satisfies bounds and linear rows within `tol`.
    pub fn satisfies_linear(&self, x: &DVector<f64>, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| x[i] >= self.lb[i] - tol && x[i] <= self.ub[i] + tol)
            && (&self.ag * x - &self.bg).iter().all(|v| *v <= tol)
            && (&self.ah * x - &self.bh).iter().all(|v| v.abs() <= tol)
    }

    /// Evaluates objective and nonlinear constraints with gradients.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<EvalRecord> {
        let n = self.dim();
        if x.len() != n {
            return Err(CboError::Input(format!("point has dimension {}, problem {n}", x.len())));
        }
        let xs = x.as_slice();
        let check = |what: &str, (v, g): (f64, DVector<f64>)| -> Result<(f64, DVector<f64>)> {
            if g.len() != n {
                return Err(CboError::Evaluation(format!("{what} gradient has wrong length")));
            }
            if !v.is_finite() || g.iter().any(|c| !c.is_finite()) {
                return Err(CboError::Evaluation(format!("{what} is not finite at {:?}", xs)));
            }
            Ok((v, g))
        };
        let (f, f_grad) = check("objective", (self.objective)(xs))?;
        let mut g_vals = DVector::zeros(self.n_g());
        let mut g_grads = DMatrix::zeros(self.n_g(), n);
        for (i, gi) in self.g.iter().enumerate() {
            let (v, gr) = check("inequality constraint", gi(xs))?;
            g_vals[i] = v;
            g_grads.set_row(i, &gr.transpose());
        }
        let mut h_vals = DVector::zeros(self.n_h());
        let mut h_grads = DMatrix::zeros(self.n_h(), n);
        for (i, hi) in self.h.iter().enumerate() {
            let (v, gr) = check("equality constraint", hi(xs))?;
            h_vals[i] = v;
            h_grads.set_row(i, &gr.transpose());
        }
        Ok(EvalRecord {
            x: x.clone(),
            f,
            f_grad,
            constraints: ConstraintEval {
                g_vals,
                g_grads,
                h_vals,
                h_grads,
            },
        })
    }
}

/// Constraint values and gradients (one row per constraint).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub g_vals: DVector<f64>,
    pub g_grads: DMatrix<f64>,
    pub h_vals: DVector<f64>,
    pub h_grads: DMatrix<f64>,
}

impl ConstraintEval {
    pub fn empty(n_d: usize) -> Self {
        Self {
            g_vals: DVector::zeros(0),
            g_grads: DMatrix::zeros(0, n_d),
            h_vals: DVector::zeros(0),
            h_grads: DMatrix::zeros(0, n_d),
        }
    }

    /// `||g+||^2 + ||h||^2`.
    pub fn infeasibility(&self) -> f64 {
        g_plus(&self.g_vals).norm_squared() + self.h_vals.norm_squared()
    }
}

/// One evaluation of the true problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub x: DVector<f64>,
    pub f: f64,
    pub f_grad: DVector<f64>,
    pub constraints: ConstraintEval,
}

/// Multipliers for the retained inequality rows and all equality rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub psi_g: DVector<f64>,
    pub psi_h: DVector<f64>,
    /// Indices (into the unfiltered inequality vector) of the rows `psi_g` refers to.
    pub active_index_map: Vec<usize>,
}

pub fn g_plus(vals: &DVector<f64>) -> DVector<f64> {
    vals.map(|v| v.max(0.0))
}

/// Quadratic penalty merit `f + rho (||h||^2 + ||g+||^2)`.
pub fn merit_l2(f: f64, eval: &ConstraintEval, rho: f64) -> f64 {
    f + rho * eval.infeasibility()
}

/// Augmented Lagrangian with the inequality correction term.
pub fn merit_aug_lagrangian(
    f: f64,
    eval: &ConstraintEval,
    psi_h: &DVector<f64>,
    psi_g: &DVector<f64>,
    rho: f64,
) -> f64 {
    let g = &eval.g_vals;
    let h = &eval.h_vals;
    let correction: f64 = g
        .iter()
        .zip(psi_g.iter())
        .map(|(gi, pi)| (pi / (2.0 * rho) + gi).min(0.0).powi(2))
        .sum();
    f + psi_h.dot(h) + psi_g.dot(g) + rho * (h.norm_squared() + g.norm_squared() - correction)
}

/// Keeps the inequality rows with value `>= threshold`.
pub fn filter_active(
    vals: &DVector<f64>,
    grads: &DMatrix<f64>,
    threshold: f64,
) -> (DVector<f64>, DMatrix<f64>, Vec<usize>) {
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] >= threshold).collect();
    let v = DVector::from_fn(keep.len(), |r, _| vals[keep[r]]);
    let g = DMatrix::from_fn(keep.len(), grads.ncols(), |r, c| grads[(keep[r], c)]);
    (v, g, keep)
}

/// The matrix whose inverse yields the multipliers. Rows are ordered
/// inequalities first, then equalities.
pub fn multiplier_matrix(eval: &ConstraintEval, alpha1: f64, alpha2: f64) -> DMatrix<f64> {
    let ng = eval.g_vals.len();
    let nh = eval.h_vals.len();
    let jac = stacked_jacobian(eval);
    let w = eval.infeasibility();
    let mut m = &jac * jac.transpose();
    for i in 0..ng + nh {
        m[(i, i)] += alpha2 * w;
    }
    for i in 0..ng {
        m[(i, i)] += alpha1 * eval.g_vals[i] * eval.g_vals[i];
    }
    m
}

pub(crate) fn stacked_jacobian(eval: &ConstraintEval) -> DMatrix<f64> {
    let ng = eval.g_vals.len();
    let nh = eval.h_vals.len();
    let n = eval.g_grads.ncols().max(eval.h_grads.ncols());
    let mut jac = DMatrix::zeros(ng + nh, n);
    if ng > 0 {
        jac.rows_mut(0, ng).copy_from(&eval.g_grads);
    }
    if nh > 0 {
        jac.rows_mut(ng, nh).copy_from(&eval.h_grads);
    }
    jac
}

/// Cholesky factor of `m`, retrying once with a diagonal jitter of
/// `1e-12 trace(m) / dim` when `m` is numerically singular.
pub(crate) fn factor_spd(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let k = m.nrows();
    let jitter = (1e-12 * m.trace() / k as f64).max(f64::MIN_POSITIVE);
    let mut mj = m.clone();
    for i in 0..k {
        mj[(i, i)] += jitter;
    }
    mj.cholesky()
        .ok_or_else(|| CboError::Numeric("multiplier matrix is not positive definite".into()))
}

/// Minimizes the multiplier objective `psi_value` in closed form. `eval`
/// should already be filtered.
pub fn solve_multipliers(
    eval: &ConstraintEval,
    f_grad: &DVector<f64>,
    alpha1: f64,
    alpha2: f64,
) -> Result<Multipliers> {
    if !(alpha1 > 0.0 && alpha2 > 0.0) {
        return Err(CboError::Input("alpha1 and alpha2 must be positive".into()));
    }
    let ng = eval.g_vals.len();
    let nh = eval.h_vals.len();
    if ng + nh == 0 {
        return Ok(Multipliers {
            psi_g: DVector::zeros(0),
            psi_h: DVector::zeros(0),
            active_index_map: Vec::new(),
        });
    }
    let m = multiplier_matrix(eval, alpha1, alpha2);
    let chol = factor_spd(&m)?;
    let rhs = -(stacked_jacobian(eval) * f_grad);
    let psi = chol.solve(&rhs);
    Ok(Multipliers {
        psi_g: psi.rows(0, ng).into_owned(),
        psi_h: psi.rows(ng, nh).into_owned(),
        active_index_map: (0..ng).collect(),
    })
}

/// `||grad f + Jg' psi_g + Jh' psi_h||^2 + alpha1 ||diag(g) psi_g||^2
/// + alpha2 w (||psi_h||^2 + ||psi_g||^2)`.
pub fn psi_value(
    psi_g: &DVector<f64>,
    psi_h: &DVector<f64>,
    eval: &ConstraintEval,
    f_grad: &DVector<f64>,
    alpha1: f64,
    alpha2: f64,
) -> f64 {
    let mut lag = f_grad.clone();
    if psi_g.len() > 0 {
        lag += eval.g_grads.transpose() * psi_g;
    }
    if psi_h.len() > 0 {
        lag += eval.h_grads.transpose() * psi_h;
    }
    let gpsi = eval.g_vals.component_mul(psi_g).norm_squared();
    lag.norm_squared() + alpha1 * gpsi + alpha2 * eval.infeasibility() * (psi_h.norm_squared() + psi_g.norm_squared())
}

/// Bound, linear and nonlinear rows combined: `[lb - x; x - ub; Ag x - bg; g]`
/// and `[Ah x - bh; h]`.
pub fn assemble_all(problem: &ConstrainedProblem, x: &DVector<f64>, nonlinear: &ConstraintEval) -> ConstraintEval {
    let n = problem.dim();
    let nlg = problem.ag.nrows();
    let ng = nonlinear.g_vals.len();
    let rows_g = 2 * n + nlg + ng;
    let mut g_vals = DVector::zeros(rows_g);
    let mut g_grads = DMatrix::zeros(rows_g, n);
    for i in 0..n {
        g_vals[i] = problem.lb[i] - x[i];
        g_grads[(i, i)] = -1.0;
        g_vals[n + i] = x[i] - problem.ub[i];
        g_grads[(n + i, i)] = 1.0;
    }
    if nlg > 0 {
        let lin = &problem.ag * x - &problem.bg;
        g_vals.rows_mut(2 * n, nlg).copy_from(&lin);
        g_grads.rows_mut(2 * n, nlg).copy_from(&problem.ag);
    }
    if ng > 0 {
        g_vals.rows_mut(2 * n + nlg, ng).copy_from(&nonlinear.g_vals);
        g_grads.rows_mut(2 * n + nlg, ng).copy_from(&nonlinear.g_grads);
    }
    let nlh = problem.ah.nrows();
    let nh = nonlinear.h_vals.len();
    let mut h_vals = DVector::zeros(nlh + nh);
    let mut h_grads = DMatrix::zeros(nlh + nh, n);
    if nlh > 0 {
        h_vals.rows_mut(0, nlh).copy_from(&(&problem.ah * x - &problem.bh));
        h_grads.rows_mut(0, nlh).copy_from(&problem.ah);
    }
    if nh > 0 {
        h_vals.rows_mut(nlh, nh).copy_from(&nonlinear.h_vals);
        h_grads.rows_mut(nlh, nh).copy_from(&nonlinear.h_grads);
    }
    ConstraintEval {
        g_vals,
        g_grads,
        h_vals,
        h_grads,
    }
}

/// Exact augmented Lagrangian of an already evaluated point.
pub fn exact_merit_of_record(problem: &ConstrainedProblem, record: &EvalRecord, rho: f64) -> Result<f64> {
    let all = assemble_all(problem, &record.x, &record.constraints);
    let (g_vals, g_grads, keep) = filter_active(&all.g_vals, &all.g_grads, ACTIVE_THRESHOLD);
    let filtered = ConstraintEval {
        g_vals,
        g_grads,
        h_vals: all.h_vals,
        h_grads: all.h_grads,
    };
    let mut mult = solve_multipliers(&filtered, &record.f_grad, DEFAULT_ALPHA, DEFAULT_ALPHA)?;
    mult.active_index_map = keep;
    Ok(merit_aug_lagrangian(record.f, &filtered, &mult.psi_h, &mult.psi_g, rho))
}

/// Exact augmented Lagrangian merit on the true problem: multipliers are
/// re-solved at `x` from the retained constraint rows.
pub fn merit_exact_aug_lagrangian(problem: &ConstrainedProblem, x: &DVector<f64>, rho: f64) -> Result<f64> {
    let record = problem.evaluate(x)?;
    exact_merit_of_record(problem, &record, rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_from(g: &[f64], gg: &[f64], h: &[f64], hg: &[f64], n: usize) -> ConstraintEval {
        ConstraintEval {
            g_vals: DVector::from_row_slice(g),
            g_grads: DMatrix::from_row_slice(g.len(), n, gg),
            h_vals: DVector::from_row_slice(h),
            h_grads: DMatrix::from_row_slice(h.len(), n, hg),
        }
    }

    #[test]
    fn g_plus_examples() {
        let v = DVector::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(g_plus(&v), DVector::from_vec(vec![0.0, 0.0, 2.0]));
        assert_eq!(g_plus(&g_plus(&v)), g_plus(&v));
        assert_eq!(g_plus(&DVector::from_vec(vec![-3.0, -1.0])), DVector::zeros(2));
    }

    #[test]
    fn l2_merit_examples() {
        let feas = eval_from(&[-1.0], &[1.0], &[0.0], &[1.0], 1);
        assert_eq!(merit_l2(3.0, &feas, 100.0), 3.0);
        let infeas = eval_from(&[], &[], &[1.0], &[1.0], 1);
        assert_eq!(merit_l2(0.0, &infeas, 100.0), 100.0);
        assert!(merit_l2(0.0, &infeas, 10.0) <= merit_l2(0.0, &infeas, 100.0));
    }

    #[test]
    fn aug_lagrangian_examples() {
        let e = eval_from(&[], &[], &[0.1], &[1.0], 1);
        let v = merit_aug_lagrangian(0.0, &e, &DVector::from_element(1, 2.0), &DVector::zeros(0), 100.0);
        assert!((v - 1.2).abs() < 1e-12);
        let e = eval_from(&[-0.3, 0.2], &[1.0, 0.0], &[0.05], &[1.0], 1);
        let zero_g = DVector::zeros(2);
        let zero_h = DVector::zeros(1);
        let a = merit_aug_lagrangian(1.5, &e, &zero_h, &zero_g, 50.0);
        assert!((a - merit_l2(1.5, &e, 50.0)).abs() < 1e-12);
    }

    #[test]
    fn equality_multiplier_sign() {
        let e = eval_from(&[], &[], &[0.0], &[1.0], 1);
        let m = solve_multipliers(&e, &DVector::from_element(1, 2.0), 100.0, 100.0).unwrap();
        assert!((m.psi_h[0] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn filter_examples() {
        let v = DVector::from_vec(vec![-5.0, -0.05, 0.2]);
        let g = DMatrix::identity(3, 3);
        let (fv, fg, keep) = filter_active(&v, &g, ACTIVE_THRESHOLD);
        assert_eq!(keep, vec![1, 2]);
        assert_eq!(fv.as_slice(), &[-0.05, 0.2]);
        assert_eq!(fg.row(0)[1], 1.0);
        let (_, _, none) = filter_active(
            &DVector::from_vec(vec![-1.0, -2.0]),
            &DMatrix::zeros(2, 1),
            ACTIVE_THRESHOLD,
        );
        assert!(none.is_empty());
        let (_, _, all) = filter_active(&v, &g, f64::NEG_INFINITY);
        assert_eq!(all, vec![0, 1, 2]);
    }

    #[test]
    fn psi_nonnegative_and_zero_case() {
        let e = eval_from(&[-0.5], &[1.0, 0.0], &[], &[], 2);
        let zero = psi_value(
            &DVector::zeros(1),
            &DVector::zeros(0),
            &e,
            &DVector::zeros(2),
            100.0,
            100.0,
        );
        assert_eq!(zero, 0.0);
        let v = psi_value(
            &DVector::from_element(1, 3.0),
            &DVector::zeros(0),
            &e,
            &DVector::from_element(2, 1.0),
            1.0,
            1.0,
        );
        assert!(v >= 0.0);
    }

    #[test]
    fn multiplier_matrix_symmetric() {
        let e = eval_from(&[0.3, -0.05], &[1.0, 2.0, -0.5, 0.4], &[0.2], &[0.7, -1.0], 2);
        let m = multiplier_matrix(&e, 100.0, 100.0);
        assert!((&m - m.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn degenerate_matrix_gets_jitter() {
        // two identical rows at a feasible point: rank deficient with w = 0
        let e = eval_from(&[], &[], &[0.0, 0.0], &[1.0, 0.0, 1.0, 0.0], 2);
        let m = solve_multipliers(&e, &DVector::from_vec(vec![2.0, 0.0]), 100.0, 100.0).unwrap();
        let stat = DVector::from_vec(vec![2.0, 0.0]) + e.h_grads.transpose() * &m.psi_h;
        assert!(stat.norm() < 1e-6);
    }

    #[test]
    fn rejects_bad_bounds() {
        let obj: ScalarFn = Arc::new(|x: &[f64]| (x[0], DVector::from_element(1, 1.0)));
        assert!(ConstrainedProblem::new(DVector::from_element(1, 1.0), DVector::from_element(1, 1.0), obj).is_err());
    }
}
