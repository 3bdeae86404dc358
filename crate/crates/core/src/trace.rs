//! Per-evaluation log of an optimization run.

use nalgebra::DVector;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based evaluation counter.
    pub eval: usize,
    pub x: DVector<f64>,
    pub f: f64,
    pub g: DVector<f64>,
    pub h: DVector<f64>,
    pub merit: f64,
    pub best_merit: f64,
    /// Strong-enforcement stage that proposed this point, if any.
    pub stage: Option<u8>,
    pub tr_circle_ub: f64,
    pub tr_sigma_ub: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    /// Set when the run stopped early because of an error.
    pub failure: Option<String>,
    /// Per row, the surrogate infeasibility at the incumbent that decided the
    /// strong-enforcement stage. Not part of the CSV form.
    pub q_mu2_best: Vec<Option<f64>>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn final_best_merit(&self) -> Option<f64> {
        self.rows.last().map(|r| r.best_merit)
    }

    /// First evaluation index at which the best merit fell below `tol` in
    /// magnitude.
    pub fn evals_to_tol(&self, tol: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.best_merit.abs() < tol).map(|r| r.eval)
    }

    /// Recomputes `best_merit` as the running minimum of `merit`. Returns
    /// whether any stored value changed.
    pub fn recompute_best(&mut self) -> bool {
        let mut best = f64::INFINITY;
        let mut changed = false;
        for r in &mut self.rows {
            if r.merit < best {
                best = r.merit;
            }
            if r.best_merit != best && !(r.best_merit.is_nan() && best.is_nan()) {
                r.best_merit = best;
                changed = true;
            }
        }
        changed
    }
}
