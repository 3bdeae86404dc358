//! Flat `key=value` settings, from files and command-line flags.
//!
//! Lines are `key = value`; `#` starts a comment. List-valued keys take
//! comma-separated values (`dim = 2,5`). Later sources override earlier ones.

use cbo_core::problems::PROBLEM_NAMES;
use cbo_core::{BoConfig, Method};
use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("missing required key '{0}'")]
    Missing(String),
    #[error("key '{key}': bad value '{value}': {msg}")]
    BadValue { key: String, value: String, msg: String },
}

pub const KEYS: [&str; 22] = [
    "problem",
    "dim",
    "method",
    "seed",
    "run",
    "n_runs",
    "max_evals",
    "tol",
    "rosen_a",
    "omega",
    "rho1",
    "rho2",
    "eps_g",
    "eps_l2",
    "nu1",
    "nu2",
    "data_region",
    "min_recent",
    "stage1_until",
    "condmax",
    "n_hyper_starts",
    "n_acq_starts",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Entries of `other` replace those of `self`.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| parse_one(key, v)).transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_one(key, s))
            .collect::<Result<Vec<T>, _>>()?;
        if items.is_empty() {
            return Err(bad(key, v, "empty list"));
        }
        Ok(Some(items))
    }

    /// Optimizer settings with every override applied; `method` is left at
    /// its default.
    pub fn bo_config(&self) -> Result<BoConfig, ConfigError> {
        let mut c = BoConfig::default();
        macro_rules! take {
            ($key:literal, $field:ident) => {
                if let Some(v) = self.parsed($key)? {
                    c.$field = v;
                }
            };
        }
        take!("seed", seed);
        take!("max_evals", max_evals);
        take!("tol", merit_tol);
        take!("omega", omega);
        take!("rho1", rho1);
        take!("rho2", rho2);
        take!("eps_g", eps_g);
        take!("eps_l2", eps_l2);
        take!("nu1", nu1);
        take!("nu2", nu2);
        take!("data_region", data_region_size);
        take!("min_recent", min_recent);
        take!("stage1_until", stage1_until);
        take!("condmax", condmax);
        take!("n_hyper_starts", n_hyper_starts);
        take!("n_acq_starts", n_acq_starts);
        Ok(c)
    }

    pub fn run_spec(&self) -> Result<RunSpec, ConfigError> {
        let problem: String = self
            .parsed("problem")?
            .ok_or_else(|| ConfigError::Missing("problem".into()))?;
        check_problem(&problem)?;
        let dim = self.parsed("dim")?.ok_or_else(|| ConfigError::Missing("dim".into()))?;
        let method = self.parsed("method")?.unwrap_or(Method::Strong);
        let n_runs: usize = self.parsed("n_runs")?.unwrap_or(5);
        let run: usize = self.parsed("run")?.unwrap_or(0);
        if n_runs == 0 || run >= n_runs {
            return Err(bad(
                "run",
                &run.to_string(),
                &format!("must be below n_runs = {n_runs}"),
            ));
        }
        let mut bo = self.bo_config()?;
        bo.method = method;
        Ok(RunSpec {
            problem,
            dim,
            run,
            n_runs,
            start_seed: self.parsed("seed")?.unwrap_or(0),
            rosen_a: self.rosen_a()?,
            bo,
        })
    }

    pub fn campaign_spec(&self) -> Result<crate::CampaignSpec, ConfigError> {
        let problems: Vec<String> = self
            .list("problem")?
            .unwrap_or_else(|| PROBLEM_NAMES.iter().map(|s| s.to_string()).collect());
        for p in &problems {
            check_problem(p)?;
        }
        let dims = self.list("dim")?.unwrap_or_else(|| vec![2, 5]);
        let methods = self.list("method")?.unwrap_or_else(|| vec![Method::Strong]);
        let n_runs: usize = self.parsed("n_runs")?.unwrap_or(5);
        if n_runs == 0 {
            return Err(bad("n_runs", "0", "must be at least 1"));
        }
        if self.get("run").is_some() {
            return Err(bad("run", self.get("run").unwrap_or(""), "not used by campaigns"));
        }
        Ok(crate::CampaignSpec {
            problems,
            dims,
            methods,
            n_runs,
            seed: self.parsed("seed")?.unwrap_or(0),
            rosen_a: self.rosen_a()?,
            bo: self.bo_config()?,
        })
    }

    fn rosen_a(&self) -> Result<f64, ConfigError> {
        Ok(self.parsed("rosen_a")?.unwrap_or(100.0))
    }
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| bad(key, v, &e.to_string()))
}

fn bad(key: &str, value: &str, msg: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: msg.to_string(),
    }
}

fn check_problem(name: &str) -> Result<(), ConfigError> {
    if PROBLEM_NAMES.contains(&name) {
        Ok(())
    } else {
        Err(bad(
            "problem",
            name,
            &format!("expected one of {}", PROBLEM_NAMES.join(", ")),
        ))
    }
}

/// One optimizer run: the start is point `run` of an `n_runs`-point Latin
/// hypercube drawn with `start_seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub problem: String,
    pub dim: usize,
    pub run: usize,
    pub n_runs: usize,
    pub start_seed: u64,
    pub rosen_a: f64,
    pub bo: BoConfig,
}
