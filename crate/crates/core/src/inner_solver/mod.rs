//! Multi-start augmented-Lagrangian solver for the acquisition subproblems.
//!
//! Bounds are handled directly by a projected quasi-Newton method; linear and
//! nonlinear rows are moved into a Powell-Hestenes-Rockafellar augmented
//! Lagrangian whose multipliers and penalty are updated between box solves.

pub mod bounded;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{CboError, Result};
use bounded::{minimize_box, BoxOptions};

/// How a nonlinear row `c(x)` is constrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowKind {
    /// `c(x) <= bound`
    Upper(f64),
    /// `c(x) = target`
    Equal(f64),
    /// `-bound <= c(x) <= bound`
    Band(f64),
}

/// Objective and nonlinear row values with gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerEval {
    pub value: f64,
    pub grad: DVector<f64>,
    /// One entry per row of `InnerProblem::rows`, in the same order.
    pub rows: Vec<(f64, DVector<f64>)>,
}

pub type InnerEvalFn<'a> = Box<dyn Fn(&DVector<f64>) -> Result<InnerEval> + Send + Sync + 'a>;

/// `min q(x)` over `lb <= x <= ub`, `Ag x <= bg`, `Ah x = bh` and the
/// nonlinear rows.
pub struct InnerProblem<'a> {
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    pub ag: DMatrix<f64>,
    pub bg: DVector<f64>,
    pub ah: DMatrix<f64>,
    pub bh: DVector<f64>,
    pub rows: Vec<RowKind>,
    /// Evaluates the objective and every nonlinear row in one call.
    pub eval: InnerEvalFn<'a>,
}

impl<'a> InnerProblem<'a> {
    pub fn new(lb: DVector<f64>, ub: DVector<f64>, rows: Vec<RowKind>, eval: InnerEvalFn<'a>) -> Self {
        let n = lb.len();
        Self {
            lb,
            ub,
            ag: DMatrix::zeros(0, n),
            bg: DVector::zeros(0),
            ah: DMatrix::zeros(0, n),
            bh: DVector::zeros(0),
            rows,
            eval,
        }
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    /// Evaluates and converts every constraint to the form `c <= 0` or `c = 0`.
    fn residuals(&self, x: &DVector<f64>) -> Result<Residuals> {
        let e = (self.eval)(x)?;
        if e.rows.len() != self.rows.len() {
            return Err(CboError::Input(format!(
                "evaluation returned {} rows, expected {}",
                e.rows.len(),
                self.rows.len()
            )));
        }
        if !e.value.is_finite() || e.grad.iter().any(|v| !v.is_finite()) {
            return Err(CboError::Evaluation("non-finite objective".into()));
        }
        let n = self.dim();
        let mut ineq = Vec::new();
        let mut eq = Vec::new();
        let lin_g = &self.ag * x - &self.bg;
        for i in 0..lin_g.len() {
            ineq.push((lin_g[i], self.ag.row(i).transpose()));
        }
        let lin_h = &self.ah * x - &self.bh;
        for i in 0..lin_h.len() {
            eq.push((lin_h[i], self.ah.row(i).transpose()));
        }
        for (kind, (c, g)) in self.rows.iter().zip(e.rows) {
            if !c.is_finite() || g.len() != n || g.iter().any(|v| !v.is_finite()) {
                return Err(CboError::Evaluation("non-finite constraint row".into()));
            }
            match *kind {
                RowKind::Upper(b) => ineq.push((c - b, g)),
                RowKind::Equal(t) => eq.push((c - t, g)),
                RowKind::Band(b) => {
                    ineq.push((-c - b, -&g));
                    ineq.push((c - b, g));
                }
            }
        }
        Ok(Residuals {
            value: e.value,
            grad: e.grad,
            ineq,
            eq,
        })
    }
}

struct Residuals {
    value: f64,
    grad: DVector<f64>,
    ineq: Vec<(f64, DVector<f64>)>,
    eq: Vec<(f64, DVector<f64>)>,
}

impl Residuals {
    fn violation(&self) -> f64 {
        self.ineq
            .iter()
            .map(|(c, _)| c.max(0.0))
            .chain(self.eq.iter().map(|(c, _)| c.abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Absolute per-row feasibility tolerance.
    pub tol: f64,
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            max_outer: 200,
            max_inner: 50,
            tol: 1e-8,
            rho_init: 10.0,
            rho_growth: 10.0,
            rho_max: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub x: DVector<f64>,
    pub value: f64,
    /// Infinity norm of the projected Lagrangian gradient.
    pub kkt_residual: f64,
    /// Largest constraint violation.
    pub violation: f64,
    pub feasible: bool,
    /// Index of the start that produced the solution.
    pub start: usize,
}

fn projected_norm(x: &DVector<f64>, g: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(lb[i], ub[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

fn solve_from(
    problem: &InnerProblem<'_>,
    x0: &DVector<f64>,
    opts: &InnerOptions,
) -> Result<(DVector<f64>, Vec<f64>, Vec<f64>)> {
    let lb = problem.lb.as_slice();
    let ub = problem.ub.as_slice();
    let mut x = x0.clone();
    let r0 = problem.residuals(&x)?;
    let mut lam_i = vec![0.0; r0.ineq.len()];
    let mut lam_e = vec![0.0; r0.eq.len()];
    if lam_i.is_empty() && lam_e.is_empty() {
        let res = minimize_box(
            |z| match problem.residuals(z) {
                Ok(r) => (r.value, r.grad),
                Err(_) => (f64::INFINITY, DVector::zeros(z.len())),
            },
            &x,
            lb,
            ub,
            &BoxOptions {
                max_iter: opts.max_inner * 4,
                ..BoxOptions::default()
            },
        );
        return Ok((res.x, lam_i, lam_e));
    }
    let mut rho = opts.rho_init;
    let mut last_violation = r0.violation();
    let mut last_value = r0.value;
    let box_opts = BoxOptions {
        max_iter: opts.max_inner,
        ..BoxOptions::default()
    };
    for _ in 0..opts.max_outer {
        let (li, le, rr) = (&lam_i, &lam_e, rho);
        let res = minimize_box(
            |z| match problem.residuals(z) {
                Ok(r) => {
                    let mut v = r.value;
                    let mut g = r.grad;
                    for ((c, cg), l) in r.ineq.iter().zip(li) {
                        let s = (l + rr * c).max(0.0);
                        v += (s * s - l * l) / (2.0 * rr);
                        if s > 0.0 {
                            g += cg * s;
                        }
                    }
                    for ((c, cg), l) in r.eq.iter().zip(le) {
                        v += l * c + 0.5 * rr * c * c;
                        g += cg * (l + rr * c);
                    }
                    (v, g)
                }
                Err(_) => (f64::INFINITY, DVector::zeros(z.len())),
            },
            &x,
            lb,
            ub,
            &box_opts,
        );
        let step = (&res.x - &x).amax();
        x = res.x;
        let r = problem.residuals(&x)?;
        for ((c, _), l) in r.ineq.iter().zip(lam_i.iter_mut()) {
            *l = (*l + rho * c).max(0.0);
        }
        for ((c, _), l) in r.eq.iter().zip(lam_e.iter_mut()) {
            *l += rho * c;
        }
        let violation = r.violation();
        let value_change = (r.value - last_value).abs() / (1.0 + r.value.abs());
        if violation <= opts.tol && step <= 1e-10 * (1.0 + x.amax()) && value_change <= 1e-12 {
            break;
        }
        if violation > 0.25 * last_violation && violation > opts.tol {
            rho = (rho * opts.rho_growth).min(opts.rho_max);
        }
        last_violation = violation;
        last_value = r.value;
    }
    Ok((x, lam_i, lam_e))
}

fn finish(
    problem: &InnerProblem<'_>,
    x: DVector<f64>,
    lam_i: &[f64],
    lam_e: &[f64],
    opts: &InnerOptions,
    start: usize,
) -> Result<InnerResult> {
    let r = problem.residuals(&x)?;
    let mut lag = r.grad.clone();
    if lam_i.len() == r.ineq.len() {
        for ((_, g), l) in r.ineq.iter().zip(lam_i) {
            lag += g * *l;
        }
    }
    if lam_e.len() == r.eq.len() {
        for ((_, g), l) in r.eq.iter().zip(lam_e) {
            lag += g * *l;
        }
    }
    let violation = r.violation();
    Ok(InnerResult {
        kkt_residual: projected_norm(&x, &lag, &problem.lb, &problem.ub),
        value: r.value,
        violation,
        feasible: violation <= opts.tol,
        x,
        start,
    })
}

/// Runs the solver from every start and keeps the feasible solution with the
/// lowest objective, or the least infeasible one (flagged) if none is
/// feasible. The starts themselves are candidates too.
pub fn minimize(problem: &InnerProblem<'_>, starts: &[DVector<f64>], opts: &InnerOptions) -> Result<InnerResult> {
    if starts.is_empty() {
        return Err(CboError::Input("at least one start is required".into()));
    }
    let n = problem.dim();
    if let Some(s) = starts.iter().find(|s| s.len() != n) {
        return Err(CboError::Input(format!(
            "start has dimension {}, expected {n}",
            s.len()
        )));
    }
    let outcomes: Vec<Vec<InnerResult>> = starts
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let mut s = s.clone();
            for i in 0..n {
                s[i] = s[i].clamp(problem.lb[i], problem.ub[i]);
            }
            let mut out = Vec::with_capacity(2);
            if let Ok(r) = finish(problem, s.clone(), &[], &[], opts, k) {
                out.push(r);
            }
            if let Ok((x, li, le)) = solve_from(problem, &s, opts) {
                if let Ok(r) = finish(problem, x, &li, &le, opts, k) {
                    out.push(r);
                }
            }
            out
        })
        .collect();
    let mut best: Option<InnerResult> = None;
    for cand in outcomes.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some(b) => match (cand.feasible, b.feasible) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => cand.value < b.value,
                (false, false) => cand.violation < b.violation,
            },
        };
        if better {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| CboError::Solver("every start failed to evaluate".into()))
}

/// `x_best` followed by `n_starts - 1` seeded points drawn uniformly in the
/// ball of squared radius `ub_circle` around `x_best`, projected onto the box.
pub fn default_starts(
    x_best: &DVector<f64>,
    ub_circle: f64,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    n_starts: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let n = x_best.len();
    let radius = ub_circle.max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![x_best.clone()];
    while starts.len() < n_starts.max(1) {
        let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
        let mut p = x_best + dir * (r / norm);
        for i in 0..n {
            p[i] = p[i].clamp(lb[i], ub[i]);
        }
        starts.push(p);
    }
    starts
}
