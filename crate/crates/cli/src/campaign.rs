//! Grids of optimizer runs over problems, dimensions and methods.

use crate::config::RunSpec;
use crate::starts::lhs_starts;
use crate::summary::{summarize, CampaignSummary, CellKey};
use crate::trace_csv::{read_trace, write_trace, TraceShape};
use anyhow::Context;
use cbo_core::problems::{self, TestProblem};
use cbo_core::{BoConfig, CboError, Method, RunTrace};
use nalgebra::DVector;
use rayon::prelude::*;
use std::fs;
use std::path::{Path, PathBuf};

pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub problems: Vec<String>,
    pub dims: Vec<usize>,
    pub methods: Vec<Method>,
    pub n_runs: usize,
    /// Seeds both the start design and, offset by the run index, each run.
    pub seed: u64,
    pub rosen_a: f64,
    /// Shared optimizer settings; `method` and `seed` are set per run.
    pub bo: BoConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub key: CellKey,
    pub run: usize,
    pub trace: RunTrace,
    /// Set when the run could not be carried out at all.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub summary: CampaignSummary,
    pub runs: Vec<RunOutcome>,
}

pub fn make_problem(name: &str, dim: usize, rosen_a: f64) -> cbo_core::Result<TestProblem> {
    if name == "rosen" {
        problems::make_rosenbrock(dim, rosen_a)
    } else {
        problems::by_name(name, dim)
    }
}

pub fn trace_file_name(key: &CellKey, run: usize) -> String {
    format!("{}_d{}_{}_run{}.csv", key.problem, key.dim, key.method, run)
}

/// Inverse of `trace_file_name`; `None` for other names.
pub fn parse_trace_file_name(name: &str) -> Option<(CellKey, usize)> {
    let stem = name.strip_suffix(".csv")?;
    let (cell, run) = stem.rsplit_once("_run")?;
    let run = run.parse().ok()?;
    let parts: Vec<&str> = cell.split('_').collect();
    let i = (1..parts.len().saturating_sub(1)).find(|&i| {
        parts[i].len() > 1 && parts[i].starts_with('d') && parts[i][1..].bytes().all(|b| b.is_ascii_digit())
    })?;
    let dim = parts[i][1..].parse().ok()?;
    Some((CellKey::new(parts[..i].join("_"), dim, parts[i + 1..].join("_")), run))
}

fn run_seed(seed: u64, run: usize) -> u64 {
    seed.wrapping_add(run as u64)
}

fn execute(tp: &TestProblem, start: &DVector<f64>, bo: &BoConfig) -> Result<RunTrace, CboError> {
    let trace = cbo_core::run(&tp.problem, start, bo)?;
    if let Some(f) = &trace.failure {
        log::warn!("{} d={} {}: stopped early: {f}", tp.name, tp.problem.dim(), bo.method);
    }
    Ok(trace)
}

/// Executes a single run as described by `spec`.
pub fn run_single(spec: &RunSpec) -> Result<RunTrace, CboError> {
    let tp = make_problem(&spec.problem, spec.dim, spec.rosen_a)?;
    let starts = lhs_starts(&tp.problem, spec.n_runs, spec.start_seed);
    let bo = BoConfig {
        seed: run_seed(spec.start_seed, spec.run),
        ..spec.bo.clone()
    };
    execute(&tp, &starts[spec.run], &bo)
}

fn worker_pool() -> anyhow::Result<rayon::ThreadPool> {
    let threads = match std::env::var("CBO_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("CBO_THREADS must be a positive integer, got '{v}'"))?,
        Err(_) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn write_trace_file(dir: &Path, key: &CellKey, run: usize, trace: &RunTrace, shape: TraceShape) -> anyhow::Result<()> {
    let path = dir.join(trace_file_name(key, run));
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_trace(std::io::BufWriter::new(file), trace, shape).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Runs every cell of `spec`. With `out` set, writes one CSV per run and the
/// rendered summary to `out/summary.txt`. Failed runs count as
/// non-converged; methods that cannot handle a problem are recorded as
/// unsupported without running.
pub fn run_campaign(spec: &CampaignSpec, out: Option<&Path>) -> anyhow::Result<CampaignOutcome> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    struct Job {
        key: CellKey,
        run: usize,
        cell: usize,
        start: DVector<f64>,
        bo: BoConfig,
    }
    let mut cells: Vec<TestProblem> = Vec::new();
    let mut jobs = Vec::new();
    let mut unsupported = Vec::new();
    for name in &spec.problems {
        for &dim in &spec.dims {
            let tp = make_problem(name, dim, spec.rosen_a)?;
            let starts = lhs_starts(&tp.problem, spec.n_runs, spec.seed);
            for &method in &spec.methods {
                let key = CellKey::new(name.clone(), dim, method.name());
                let bo = BoConfig {
                    method,
                    ..spec.bo.clone()
                };
                match bo.validate(&tp.problem) {
                    Ok(()) => {}
                    Err(CboError::Unsupported(msg)) => {
                        unsupported.push((key, msg));
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                }
                for (run, start) in starts.iter().enumerate() {
                    jobs.push(Job {
                        key: key.clone(),
                        run,
                        cell: cells.len(),
                        start: start.clone(),
                        bo: BoConfig {
                            seed: run_seed(spec.seed, run),
                            ..bo.clone()
                        },
                    });
                }
            }
            cells.push(tp);
        }
    }

    let pool = worker_pool()?;
    let results: Vec<anyhow::Result<RunOutcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let tp = &cells[job.cell];
                let (trace, error) = match execute(tp, &job.start, &job.bo) {
                    Ok(t) => (t, None),
                    Err(e) => {
                        log::warn!("{} run {}: {e}", trace_file_name(&job.key, job.run), job.run);
                        (RunTrace::default(), Some(e.to_string()))
                    }
                };
                log::info!(
                    "{} run {}: {} evaluations, best merit {:?}",
                    job.key.method,
                    job.run,
                    trace.len(),
                    trace.final_best_merit()
                );
                if let Some(dir) = out {
                    let p = &tp.problem;
                    let shape = TraceShape {
                        n_d: p.dim(),
                        n_g: p.n_g(),
                        n_h: p.n_h(),
                    };
                    write_trace_file(dir, &job.key, job.run, &trace, shape)?;
                }
                Ok(RunOutcome {
                    key: job.key.clone(),
                    run: job.run,
                    trace,
                    error,
                })
            })
            .collect()
    });
    let runs = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;

    let mut summary = summarize(runs.iter().map(|r| (&r.key, &r.trace)), spec.bo.merit_tol);
    for (key, msg) in unsupported {
        summary.mark_unsupported(key, msg);
    }
    if let Some(dir) = out {
        let path = dir.join(SUMMARY_FILE);
        fs::write(&path, summary.render()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(CampaignOutcome { summary, runs })
}

/// Summarizes every `*.csv` trace in `dir`. Files named like campaign output
/// are grouped by cell; any other trace forms its own cell under problem
/// `external`, keyed by file stem. Returns the summary and ingest warnings.
pub fn summarize_dir(dir: &Path, tol: f64) -> anyhow::Result<(CampaignSummary, Vec<String>)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut runs: Vec<(CellKey, usize, RunTrace)> = Vec::new();
    let mut warnings = Vec::new();
    for path in files {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let ing = read_trace(file).with_context(|| format!("parsing {}", path.display()))?;
        warnings.extend(ing.warnings.iter().map(|w| format!("{name}: {w}")));
        let (key, run) = parse_trace_file_name(&name).unwrap_or_else(|| {
            let stem = name.trim_end_matches(".csv").to_string();
            (CellKey::new("external", ing.shape.n_d, stem), 0)
        });
        runs.push((key, run, ing.trace));
    }
    runs.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    Ok((summarize(runs.iter().map(|(k, _, t)| (k, t)), tol), warnings))
}
