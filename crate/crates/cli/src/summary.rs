//! Per-cell success counts and median evaluations to tolerance.

use cbo_core::problems::PROBLEM_NAMES;
use cbo_core::RunTrace;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

/// One (problem, dimension, method) cell of a campaign.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub problem: String,
    pub dim: usize,
    pub method: String,
}

impl CellKey {
    pub fn new(problem: impl Into<String>, dim: usize, method: impl Into<String>) -> Self {
        Self {
            problem: problem.into(),
            dim,
            method: method.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellSummary {
    pub n_runs: usize,
    pub n_converged: usize,
    /// Median evaluations to tolerance over converged runs.
    pub median_iters: Option<f64>,
    /// Final best merit of each run, in run order. NaN for runs that
    /// produced no evaluation.
    pub final_merits: Vec<f64>,
    /// Set when the method cannot handle the problem and no run was made.
    pub unsupported: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub tol: f64,
    pub cells: BTreeMap<CellKey, CellSummary>,
}

/// Whether a trace counts as converged: its final best merit is below `tol`
/// in magnitude.
pub fn trace_converged(trace: &RunTrace, tol: f64) -> bool {
    trace.final_best_merit().is_some_and(|m| m.abs() < tol)
}

pub fn median(values: &[usize]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    })
}

/// Summarizes runs grouped by cell; runs keep their input order within a cell.
pub fn summarize<'a>(runs: impl IntoIterator<Item = (&'a CellKey, &'a RunTrace)>, tol: f64) -> CampaignSummary {
    let mut cells: BTreeMap<CellKey, CellSummary> = BTreeMap::new();
    let mut iters: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for (key, trace) in runs {
        let cell = cells.entry(key.clone()).or_default();
        cell.n_runs += 1;
        cell.final_merits.push(trace.final_best_merit().unwrap_or(f64::NAN));
        if trace_converged(trace, tol) {
            cell.n_converged += 1;
            if let Some(k) = trace.evals_to_tol(tol) {
                iters.entry(key.clone()).or_default().push(k);
            }
        }
    }
    for (key, cell) in cells.iter_mut() {
        cell.median_iters = iters.get(key).and_then(|v| median(v));
    }
    CampaignSummary { tol, cells }
}

impl CampaignSummary {
    pub fn mark_unsupported(&mut self, key: CellKey, reason: String) {
        self.cells.insert(
            key,
            CellSummary {
                unsupported: Some(reason),
                ..Default::default()
            },
        );
    }

    /// Text report: a count table with one `a·b·c` entry per (method, dim)
    /// listing converged runs per problem, followed by per-cell details.
    pub fn render(&self) -> String {
        let problem_rank = |p: &str| {
            PROBLEM_NAMES
                .iter()
                .position(|q| *q == p)
                .unwrap_or(PROBLEM_NAMES.len())
        };
        let mut problems: Vec<&str> = self
            .cells
            .keys()
            .map(|k| k.problem.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        problems.sort_by_key(|p| (problem_rank(p), p.to_string()));
        let dims: BTreeSet<usize> = self.cells.keys().map(|k| k.dim).collect();
        let methods: BTreeSet<&str> = self.cells.keys().map(|k| k.method.as_str()).collect();

        let mut out = String::new();
        let _ = writeln!(out, "tol = {:e}", self.tol);
        let _ = writeln!(out);
        let _ = writeln!(out, "converged runs per cell ({})", problems.join("·"));
        let _ = write!(out, "{:<18}", "method");
        for d in &dims {
            let _ = write!(out, " {:>12}", format!("d={d}"));
        }
        let _ = writeln!(out);
        for m in &methods {
            let _ = write!(out, "{m:<18}");
            for &d in &dims {
                let entry: Vec<String> = problems
                    .iter()
                    .map(|p| match self.cells.get(&CellKey::new(*p, d, *m)) {
                        None => " ".to_string(),
                        Some(c) if c.unsupported.is_some() => "-".to_string(),
                        Some(c) => c.n_converged.to_string(),
                    })
                    .collect();
                let _ = write!(out, " {:>12}", entry.join("·"));
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<8} {:>4} {:<18} {:>9} {:>12}  final best merits",
            "problem", "dim", "method", "converged", "median_evals"
        );
        let mut keys: Vec<&CellKey> = self.cells.keys().collect();
        keys.sort_by_key(|k| (problem_rank(&k.problem), k.problem.clone(), k.dim, k.method.clone()));
        for k in keys {
            let c = &self.cells[k];
            if let Some(reason) = &c.unsupported {
                let _ = writeln!(
                    out,
                    "{:<8} {:>4} {:<18} unsupported: {reason}",
                    k.problem, k.dim, k.method
                );
                continue;
            }
            let med = c.median_iters.map(|m| m.to_string()).unwrap_or_else(|| "none".into());
            let merits: Vec<String> = c.final_merits.iter().map(|m| format!("{m:.3e}")).collect();
            let _ = writeln!(
                out,
                "{:<8} {:>4} {:<18} {:>9} {:>12}  {}",
                k.problem,
                k.dim,
                k.method,
                format!("{}/{}", c.n_converged, c.n_runs),
                med,
                merits.join(" ")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbo_core::TraceRow;
    use nalgebra::DVector;

    fn trace_hitting(at: Option<usize>, len: usize) -> RunTrace {
        let rows = (1..=len)
            .map(|e| {
                let m = if at.is_some_and(|k| e >= k) { 1e-7 } else { 1.0 };
                TraceRow {
                    eval: e,
                    x: DVector::zeros(2),
                    f: 0.0,
                    g: DVector::zeros(0),
                    h: DVector::zeros(0),
                    merit: m,
                    best_merit: m,
                    stage: None,
                    tr_circle_ub: 1.0,
                    tr_sigma_ub: 1.0,
                }
            })
            .collect();
        RunTrace {
            rows,
            ..Default::default()
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[40]), Some(40.0));
        assert_eq!(median(&[70, 30, 50]), Some(50.0));
        assert_eq!(median(&[10, 20]), Some(15.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn median_over_converged_only() {
        let key = CellKey::new("quad", 2, "strong");
        let traces = [
            trace_hitting(Some(30), 30),
            trace_hitting(None, 300),
            trace_hitting(Some(50), 50),
            trace_hitting(Some(70), 70),
        ];
        let s = summarize(traces.iter().map(|t| (&key, t)), 1e-5);
        let c = &s.cells[&key];
        assert_eq!((c.n_runs, c.n_converged), (4, 3));
        assert_eq!(c.median_iters, Some(50.0));
        assert_eq!(c.final_merits.len(), 4);
    }

    #[test]
    fn all_failed_cell_reports_none() {
        let key = CellKey::new("rosen", 5, "cei");
        let t = trace_hitting(None, 10);
        let s = summarize([(&key, &t)], 1e-5);
        assert_eq!(s.cells[&key].median_iters, None);
        assert!(s.render().contains("none"));
    }

    #[test]
    fn table_cells_use_problem_order() {
        let mut runs = Vec::new();
        let ok = trace_hitting(Some(5), 5);
        let bad = trace_hitting(None, 5);
        for (p, t) in [("rosen", &bad), ("quad", &ok), ("prod", &ok)] {
            runs.push((CellKey::new(p, 2, "strong"), t.clone()));
        }
        let mut s = summarize(runs.iter().map(|(k, t)| (k, t)), 1e-5);
        s.mark_unsupported(CellKey::new("prod", 2, "cei"), "equality constraints".into());
        let text = s.render();
        assert!(text.contains("converged runs per cell (quad·prod·rosen)"));
        assert!(text.contains("1·1·0"), "{text}");
        assert!(text.contains(" ·-· "), "{text}");
        assert!(text.contains("unsupported: equality constraints"));
    }
}
