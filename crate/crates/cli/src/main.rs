use anyhow::Context;
use cbo_cli::campaign::run_single;
use cbo_cli::campaign::summarize_dir;
use cbo_cli::check::run_checks;
use cbo_cli::trace_csv::TraceShape;
use cbo_cli::{run_campaign, write_trace, Settings};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_RUN: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(
    name = "cbo",
    version,
    about = "Constrained Bayesian optimization with gradient-enhanced surrogates"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one optimization and write its trace as CSV.
    Run {
        #[command(flatten)]
        opts: Overrides,
        /// Output CSV file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of problems, dimensions and methods.
    Campaign {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a directory of trace CSVs.
    Summarize {
        dir: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Run acceptance checks (all when no ids are given).
    Check { ids: Vec<u8> },
}

/// Settings given as flags; each overrides the same key from `--config`.
#[derive(Args)]
struct Overrides {
    /// `key = value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    run: Option<String>,
    #[arg(long)]
    n_runs: Option<String>,
    #[arg(long)]
    max_evals: Option<String>,
    #[arg(long)]
    tol: Option<String>,
}

impl Overrides {
    fn settings(&self) -> anyhow::Result<Settings> {
        let mut s = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Settings::parse(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => Settings::default(),
        };
        let mut flags = Settings::default();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
            flags.set(k.trim(), v.trim())?;
        }
        let named = [
            ("problem", &self.problem),
            ("dim", &self.dim),
            ("method", &self.method),
            ("seed", &self.seed),
            ("run", &self.run),
            ("n_runs", &self.n_runs),
            ("max_evals", &self.max_evals),
            ("tol", &self.tol),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                flags.set(k, v.as_str())?;
            }
        }
        s.merge(&flags);
        Ok(s)
    }
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
    Check,
}

fn run_cmd(opts: &Overrides, out: Option<&Path>) -> Result<(), Failure> {
    let spec = opts
        .settings()
        .and_then(|s| Ok(s.run_spec()?))
        .map_err(Failure::Usage)?;
    let trace = run_single(&spec).map_err(|e| Failure::Run(e.into()))?;
    let shape = TraceShape::of(&trace).ok_or_else(|| Failure::Run(anyhow::anyhow!("run produced no evaluations")))?;
    let write = |w: Box<dyn std::io::Write>| write_trace(w, &trace, shape).map_err(|e| Failure::Run(e.into()));
    match out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| Failure::Run(e.into()))?;
            write(Box::new(std::io::BufWriter::new(f)))?;
        }
        None => write(Box::new(std::io::stdout().lock()))?,
    }
    eprintln!(
        "{} d={} {}: {} evaluations, best merit {:e}",
        spec.problem,
        spec.dim,
        spec.bo.method,
        trace.len(),
        trace.final_best_merit().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run { opts, out } => run_cmd(&opts, out.as_deref()),
        Cmd::Campaign { opts, out } => {
            let spec = opts
                .settings()
                .and_then(|s| Ok(s.campaign_spec()?))
                .map_err(Failure::Usage)?;
            let outcome = run_campaign(&spec, Some(&out)).map_err(Failure::Run)?;
            print!("{}", outcome.summary.render());
            Ok(())
        }
        Cmd::Summarize { dir, tol } => {
            let (summary, warnings) = summarize_dir(&dir, tol).map_err(Failure::Run)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", summary.render());
            Ok(())
        }
        Cmd::Check { ids } => {
            if let Some(bad) = ids.iter().find(|&&i| !(1..=8).contains(&i)) {
                return Err(Failure::Usage(anyhow::anyhow!("no criterion {bad}; expected 1 to 8")));
            }
            let exe = std::env::current_exe().map_err(|e| Failure::Run(e.into()))?;
            let results = run_checks(&ids, &exe);
            for r in &results {
                println!("{r}");
            }
            if results.iter().all(|r| r.passed) {
                Ok(())
            } else {
                Err(Failure::Check)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUN)
        }
        Err(Failure::Check) => ExitCode::from(EXIT_CHECK),
    }
}
