//! The outer Bayesian optimization loop.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acquisition;
use crate::acquisition::{acq_exact_lagrangian, BundlePosterior, LagrangianSettings, SurrogateBundle, PENALTY_WEIGHT};
use crate::constraints::{exact_merit_of_record, ConstrainedProblem, EvalRecord, MERIT_RHO};
use crate::error::{CboError, Result};
use crate::gp::{select_hyperparameters, GpModel, HyperSearch, TrainingSet};
use crate::inner_solver::{self, InnerEval, InnerOptions, InnerProblem, InnerResult, RowKind};
use crate::kernels::KernelParams;
use crate::trace::{RunTrace, TraceRow};
use crate::trust::{is_active, tr_circle, TrustConfig, TrustState};

/// How nonlinear constraints enter the acquisition subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    ExactLagrangian,
    Strong,
    L2Penalty,
    Cei,
    Cuc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ExactLagrangian,
        Method::Strong,
        Method::L2Penalty,
        Method::Cei,
        Method::Cuc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ExactLagrangian => "exact_lagrangian",
            Method::Strong => "strong",
            Method::L2Penalty => "l2_penalty",
            Method::Cei => "cei",
            Method::Cuc => "cuc",
        }
    }

    /// Whether the method relies on probabilities of feasibility.
    pub fn needs_inequalities_only(self) -> bool {
        matches!(self, Method::Cei | Method::Cuc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CboError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            CboError::Input(format!(
                "unknown method '{s}', expected one of {}",
                Method::ALL.map(|m| m.name()).join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoConfig {
    pub method: Method,
    pub omega: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub eps_g: f64,
    pub eps_l2: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub data_region_size: usize,
    pub min_recent: usize,
    pub stage1_until: usize,
    pub condmax: f64,
    pub n_hyper_starts: usize,
    pub n_acq_starts: usize,
    pub max_evals: usize,
    pub merit_tol: f64,
    pub seed: u64,
    pub trust: TrustConfig,
    pub inner: InnerOptions,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            method: Method::Strong,
            omega: 0.0,
            rho1: 100.0,
            rho2: 100.0,
            eps_g: -0.1,
            eps_l2: 1.0,
            nu1: 10.0,
            nu2: 1.0,
            data_region_size: 20,
            min_recent: 3,
            stage1_until: 10,
            condmax: crate::gp::DEFAULT_CONDMAX,
            n_hyper_starts: 50,
            n_acq_starts: 5,
            max_evals: 300,
            merit_tol: 1e-5,
            seed: 0,
            trust: TrustConfig::default(),
            inner: InnerOptions::default(),
        }
    }
}

impl BoConfig {
    pub fn validate(&self, problem: &ConstrainedProblem) -> Result<()> {
        let positive = [
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("eps_l2", self.eps_l2),
            ("nu1", self.nu1),
            ("nu2", self.nu2),
            ("merit_tol", self.merit_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(CboError::Input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.omega >= 0.0) {
            return Err(CboError::Input(format!(
                "omega must be nonnegative, got {}",
                self.omega
            )));
        }
        if !(self.condmax > 1.0) {
            return Err(CboError::Input("condmax must exceed 1".into()));
        }
        if self.data_region_size == 0 || self.n_hyper_starts == 0 || self.n_acq_starts == 0 || self.max_evals == 0 {
            return Err(CboError::Input(
                "data_region_size, n_hyper_starts, n_acq_starts and max_evals must be at least 1".into(),
            ));
        }
        if self.method.needs_inequalities_only() && (problem.n_h() > 0 || problem.ah.nrows() > 0) {
            return Err(CboError::Unsupported(format!(
                "method {} cannot handle equality constraints",
                self.method
            )));
        }
        Ok(())
    }
}

/// History of evaluations and the incumbent.
#[derive(Debug, Clone)]
pub struct BoState {
    pub history: Vec<EvalRecord>,
    pub merits: Vec<f64>,
    pub best_index: usize,
    pub trust: TrustState,
    pub iteration: usize,
    warm: Vec<Option<KernelParams>>,
}

impl BoState {
    pub fn new(trust: TrustState) -> Self {
        Self {
            history: Vec::new(),
            merits: Vec::new(),
            best_index: 0,
            trust,
            iteration: 0,
            warm: Vec::new(),
        }
    }

    pub fn x_best(&self) -> &DVector<f64> {
        &self.history[self.best_index].x
    }

    pub fn best_merit(&self) -> f64 {
        self.merits[self.best_index]
    }

    /// Appends a record; returns whether the best merit improved.
    pub fn push(&mut self, record: EvalRecord, merit: f64) -> bool {
        self.history.push(record);
        self.merits.push(merit);
        let i = self.merits.len() - 1;
        if i == 0 {
            self.best_index = 0;
            return true;
        }
        let old = self.merits[self.best_index];
        if merit < old || (old.is_nan() && !merit.is_nan()) {
            self.best_index = i;
            merit < old - 1e-12 * old.abs()
        } else {
            false
        }
    }
}

/// Indices of the points used to fit the surrogates: the `size` nearest to
/// `x_best` with the newest `min_recent` points and `x_best` always kept.
/// Distance ties go to the lower index. Returned in increasing order.
pub fn select_data_region(points: &[DVector<f64>], best: usize, size: usize, min_recent: usize) -> Vec<usize> {
    let n = points.len();
    if n <= size {
        return (0..n).collect();
    }
    let mut chosen = vec![false; n];
    let mut count = 0;
    let force = |i: usize, chosen: &mut Vec<bool>, count: &mut usize| {
        if !chosen[i] && *count < size {
            chosen[i] = true;
            *count += 1;
        }
    };
    force(best, &mut chosen, &mut count);
    for i in (n.saturating_sub(min_recent)..n).rev() {
        force(i, &mut chosen, &mut count);
    }
    let xb = &points[best];
    let mut order: Vec<(f64, usize)> = (0..n).map(|i| ((&points[i] - xb).norm_squared(), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (_, i) in order {
        if count >= size {
            break;
        }
        force(i, &mut chosen, &mut count);
    }
    (0..n).filter(|&i| chosen[i]).collect()
}

/// `(nu1 z)^nu2 / ((nu1 z)^nu2 + 1)` for `z >= 0`.
pub fn zeta(z: f64, nu1: f64, nu2: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    let t = (nu1 * z).powf(nu2);
    if t.is_infinite() {
        1.0
    } else {
        t / (t + 1.0)
    }
}

/// Strong-enforcement stage for the given history length and surrogate
/// infeasibility at the incumbent.
pub fn strong_stage(n_x: usize, q_mu2_best: f64, config: &BoConfig) -> u8 {
    if n_x < config.stage1_until {
        1
    } else if q_mu2_best >= config.eps_l2 {
        2
    } else {
        3
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits one GP per function (objective first, then inequalities, then
/// equalities) on the data region.
pub fn fit_surrogates(state: &mut BoState, region: &[usize], config: &BoConfig) -> Result<SurrogateBundle> {
    let first = &state.history[0];
    let n_g = first.constraints.g_vals.len();
    let n_h = first.constraints.h_vals.len();
    let n_fun = 1 + n_g + n_h;
    if state.warm.len() != n_fun {
        state.warm = vec![None; n_fun];
    }
    let points: Vec<DVector<f64>> = region.iter().map(|&i| state.history[i].x.clone()).collect();
    let fallback = state.trust.radius().max(1e-8);
    let history = &state.history;
    let warm = &state.warm;
    let iteration = state.iteration as u64;
    let models: Vec<Result<GpModel>> = (0..n_fun)
        .into_par_iter()
        .map(|k| {
            let (values, grads): (Vec<f64>, Vec<DVector<f64>>) = region
                .iter()
                .map(|&i| {
                    let r = &history[i];
                    if k == 0 {
                        (r.f, r.f_grad.clone())
                    } else if k <= n_g {
                        let c = &r.constraints;
                        (c.g_vals[k - 1], c.g_grads.row(k - 1).transpose())
                    } else {
                        let c = &r.constraints;
                        (c.h_vals[k - 1 - n_g], c.h_grads.row(k - 1 - n_g).transpose())
                    }
                })
                .unzip();
            let training = TrainingSet::from_points(&points, &values, &grads)?;
            let search = HyperSearch {
                n_starts: config.n_hyper_starts,
                seed: mix_seed(config.seed, iteration, k as u64),
                fallback_scale: fallback,
                warm_start: warm[k].clone(),
                ..HyperSearch::default()
            };
            let params = select_hyperparameters(&training, config.condmax, &search)?;
            GpModel::fit(training, params, config.condmax)
        })
        .collect();
    let mut models = models.into_iter().collect::<Result<Vec<_>>>()?;
    for (k, m) in models.iter().enumerate() {
        state.warm[k] = Some(m.params().clone());
    }
    let h_models = models.split_off(1 + n_g);
    let g_models = models.split_off(1);
    let f_model = models.pop().expect("objective model");
    Ok(SurrogateBundle {
        f_model,
        g_models,
        h_models,
    })
}

/// A proposed next evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: DVector<f64>,
    pub stage: Option<u8>,
    /// Whether the circle / sigma trust regions were active at the solution.
    pub active: (bool, bool),
    pub feasible: bool,
    /// Surrogate infeasibility at the incumbent, when a strong stage was chosen.
    pub q_mu2_best: Option<f64>,
}

enum Objective {
    Composite { weight_exploration: f64 },
    ExactLagrangian,
    Cei { f_best: f64 },
    Cuc,
}

enum Extra {
    None,
    Mu2(f64),
    PerConstraint(Vec<f64>, Vec<f64>),
}

fn mu2_of(bp: &BundlePosterior) -> (f64, DVector<f64>) {
    let n = bp.f.mu_grad.len();
    let mut v = 0.0;
    let mut g = DVector::zeros(n);
    for p in bp.g.iter().filter(|p| p.mu > 0.0).chain(bp.h.iter()) {
        v += p.mu * p.mu;
        g += &p.mu_grad * (2.0 * p.mu);
    }
    (v, g)
}

fn solve_subproblem(
    state: &BoState,
    problem: &ConstrainedProblem,
    bundle: &SurrogateBundle,
    config: &BoConfig,
    objective: &Objective,
    extra: &Extra,
    trust: &TrustState,
    salt: u64,
) -> Result<InnerResult> {
    let x_best = state.x_best().clone();
    let ub_circle = trust.ub_circle;
    let ub_sigma = trust.ub_sigma;
    let mut rows = vec![RowKind::Upper(1.0), RowKind::Upper(1.0)];
    match extra {
        Extra::None => {}
        Extra::Mu2(b) => rows.push(RowKind::Upper(*b)),
        Extra::PerConstraint(ug, uh) => {
            rows.extend(ug.iter().map(|&b| RowKind::Upper(b)));
            rows.extend(uh.iter().map(|&b| RowKind::Band(b)));
        }
    }
    let settings = LagrangianSettings {
        rho: config.rho1,
        threshold: config.eps_g,
        ..LagrangianSettings::default()
    };
    let omega = config.omega;
    let rho2 = config.rho2;
    let xb = x_best.clone();
    let eval = move |x: &DVector<f64>| -> Result<InnerEval> {
        let xs = x.as_slice();
        let bp = bundle.posterior(xs);
        let n = xs.len();
        let (value, grad) = match objective {
            Objective::Composite { weight_exploration } => {
                let (u, du) = if omega == 0.0 {
                    (bp.f.mu, bp.f.mu_grad.clone())
                } else {
                    let (s, ds) = bp.f.sigma(acquisition::SIGMA_FLOOR);
                    (bp.f.mu - omega * s, &bp.f.mu_grad - ds * omega)
                };
                let (l, dl) = mu2_of(&bp);
                let mut v = u + PENALTY_WEIGHT * l;
                let mut g = du + dl * PENALTY_WEIGHT;
                if *weight_exploration > 0.0 {
                    let (e, de) = acquisition::acq_exploration(bundle, xs);
                    v += weight_exploration * e;
                    g += de * *weight_exploration;
                }
                (v, g)
            }
            Objective::ExactLagrangian => {
                let (l, dl) = acq_exact_lagrangian(bundle, problem, xs, &settings)?;
                let (e, de) = acquisition::acq_exploration(bundle, xs);
                (l + rho2 * e, dl + de * rho2)
            }
            Objective::Cei { f_best } => acquisition::acq_cei(bundle, xs, *f_best)?,
            Objective::Cuc => acquisition::acq_cuc(bundle, xs, omega)?,
        };
        let (c, dc) = tr_circle(xs, xb.as_slice());
        let mut out = vec![(c / ub_circle, dc / ub_circle)];
        out.push((bp.f.var_ratio / ub_sigma, &bp.f.var_ratio_grad / ub_sigma));
        match extra {
            Extra::None => {}
            Extra::Mu2(_) => out.push(mu2_of(&bp)),
            Extra::PerConstraint(..) => {
                out.extend(bp.g.iter().map(|p| (p.mu, p.mu_grad.clone())));
                out.extend(bp.h.iter().map(|p| (p.mu, p.mu_grad.clone())));
            }
        }
        debug_assert_eq!(grad.len(), n);
        Ok(InnerEval { value, grad, rows: out })
    };
    let mut inner = InnerProblem::new(problem.lb.clone(), problem.ub.clone(), rows, Box::new(eval));
    inner.ag = problem.ag.clone();
    inner.bg = problem.bg.clone();
    inner.ah = problem.ah.clone();
    inner.bh = problem.bh.clone();
    let starts = inner_solver::default_starts(
        &x_best,
        ub_circle,
        &problem.lb,
        &problem.ub,
        config.n_acq_starts,
        mix_seed(config.seed ^ 0xA5A5, state.iteration as u64, salt),
    );
    inner_solver::minimize(&inner, &starts, &config.inner)
}

fn proposal_from(
    res: InnerResult,
    state: &BoState,
    bundle: &SurrogateBundle,
    trust: &TrustState,
    stage: Option<u8>,
) -> Proposal {
    let xs = res.x.as_slice();
    let circle = tr_circle(xs, state.x_best().as_slice()).0;
    let sigma = bundle.f_model.posterior(xs).var_ratio;
    Proposal {
        active: (is_active(circle, trust.ub_circle), is_active(sigma, trust.ub_sigma)),
        feasible: res.feasible,
        x: res.x,
        stage,
        q_mu2_best: None,
    }
}

/// Minimizes `q_Lag(rho1) + rho2 q_Exp` inside both trust regions.
pub fn step_exact_lagrangian(
    state: &BoState,
    problem: &ConstrainedProblem,
    bundle: &SurrogateBundle,
    config: &BoConfig,
    trust: &TrustState,
) -> Result<Proposal> {
    let res = solve_subproblem(
        state,
        problem,
        bundle,
        config,
        &Objective::ExactLagrangian,
        &Extra::None,
        trust,
        0,
    )?;
    Ok(proposal_from(res, state, bundle, trust, None))
}

/// Staged strong enforcement of the surrogate constraints.
pub fn step_strong(
    state: &BoState,
    problem: &ConstrainedProblem,
    bundle: &SurrogateBundle,
    config: &BoConfig,
    trust: &TrustState,
) -> Result<Proposal> {
    let xb = state.x_best().as_slice();
    let bp = bundle.posterior(xb);
    let q_best = mu2_of(&bp).0;
    let stage = strong_stage(state.history.len(), q_best, config);
    let objective = Objective::Composite {
        weight_exploration: PENALTY_WEIGHT,
    };
    let extra = match stage {
        1 => Extra::None,
        2 => Extra::Mu2(zeta(q_best, config.nu1, config.nu2) * q_best),
        _ => {
            let ug =
                bp.g.iter()
                    .map(|p| {
                        let m = p.mu.max(0.0);
                        zeta(m, config.nu1, config.nu2) * m
                    })
                    .collect();
            let uh =
                bp.h.iter()
                    .map(|p| {
                        let m = p.mu.abs();
                        zeta(m, config.nu1, config.nu2) * m
                    })
                    .collect();
            Extra::PerConstraint(ug, uh)
        }
    };
    let res = solve_subproblem(state, problem, bundle, config, &objective, &extra, trust, stage as u64)?;
    let mut p = proposal_from(res, state, bundle, trust, Some(stage));
    p.q_mu2_best = Some(q_best);
    Ok(p)
}

fn step(
    state: &BoState,
    problem: &ConstrainedProblem,
    bundle: &SurrogateBundle,
    config: &BoConfig,
    trust: &TrustState,
) -> Result<Proposal> {
    match config.method {
        Method::ExactLagrangian => step_exact_lagrangian(state, problem, bundle, config, trust),
        Method::Strong => step_strong(state, problem, bundle, config, trust),
        Method::L2Penalty => {
            let res = solve_subproblem(
                state,
                problem,
                bundle,
                config,
                &Objective::Composite {
                    weight_exploration: 0.0,
                },
                &Extra::None,
                trust,
                7,
            )?;
            Ok(proposal_from(res, state, bundle, trust, None))
        }
        Method::Cei | Method::Cuc => {
            let objective = if config.method == Method::Cei {
                Objective::Cei {
                    f_best: state.history[state.best_index].f,
                }
            } else {
                Objective::Cuc
            };
            let res = solve_subproblem(state, problem, bundle, config, &objective, &Extra::None, trust, 9)?;
            Ok(proposal_from(res, state, bundle, trust, None))
        }
    }
}

fn min_distance(points: &[EvalRecord], x: &DVector<f64>) -> f64 {
    points.iter().map(|r| (&r.x - x).norm()).fold(f64::INFINITY, f64::min)
}

/// Produces the next point, shrinking the trust regions if the subproblem
/// fails or only reproduces an evaluated point.
pub fn propose(state: &mut BoState, problem: &ConstrainedProblem, config: &BoConfig) -> Result<Proposal> {
    let region = select_data_region(
        &state.history.iter().map(|r| r.x.clone()).collect::<Vec<_>>(),
        state.best_index,
        config.data_region_size,
        config.min_recent,
    );
    let bundle = fit_surrogates(state, &region, config)?;
    let diameter = (&problem.ub - &problem.lb).norm();
    let dup_tol = 1e-10 * diameter;
    let mut trust = state.trust.clone();
    let mut retried = false;
    loop {
        match step(state, problem, &bundle, config, &trust) {
            Ok(p) if min_distance(&state.history, &p.x) > dup_tol => {
                state.trust = trust;
                return Ok(p);
            }
            Ok(p) if retried => {
                state.trust = trust;
                return Ok(perturb(state, problem, p, config));
            }
            Ok(_) => {
                log::debug!("proposal duplicates an evaluated point, shrinking trust regions");
            }
            Err(e) if retried => return Err(e),
            Err(e) => log::debug!("subproblem failed ({e}), shrinking trust regions"),
        }
        trust = trust.shrink(&config.trust);
        retried = true;
    }
}

fn perturb(state: &BoState, problem: &ConstrainedProblem, mut p: Proposal, config: &BoConfig) -> Proposal {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, state.iteration as u64, 0xD0D0));
    let n = p.x.len();
    let scale = (1e-3 * state.trust.radius()).max(1e-9 * (1.0 + p.x.amax()));
    let mut x = p.x.clone();
    for _ in 0..100 {
        x = DVector::from_fn(n, |i, _| {
            (p.x[i] + scale * (2.0 * rng.gen::<f64>() - 1.0)).clamp(problem.lb[i], problem.ub[i])
        });
        if min_distance(&state.history, &x) > 0.0 {
            break;
        }
    }
    p.x = x;
    p
}

/// A best merit counts as converged only if it is small in magnitude: the
/// exact augmented Lagrangian can turn very negative far from any KKT point,
/// which also ends the run but is reported as a failure.
pub fn is_converged(best_merit: f64, tol: f64) -> bool {
    best_merit.abs() < tol
}

/// Runs the optimizer from `x0` until the best merit falls below
/// `merit_tol` or `max_evals` evaluations have been made.
pub fn run(problem: &ConstrainedProblem, x0: &DVector<f64>, config: &BoConfig) -> Result<RunTrace> {
    config.validate(problem)?;
    if x0.len() != problem.dim() {
        return Err(CboError::Input(format!(
            "start has dimension {}, problem {}",
            x0.len(),
            problem.dim()
        )));
    }
    if !problem.satisfies_linear(x0, 1e-8) {
        return Err(CboError::Input(
            "start point violates bounds or linear constraints".into(),
        ));
    }
    let mut state = BoState::new(TrustState::initial(&problem.lb, &problem.ub, &config.trust));
    let mut trace = RunTrace::default();
    let mut x = x0.clone();
    let mut pending: Option<Proposal> = None;
    loop {
        let record = match problem.evaluate(&x) {
            Ok(r) => r,
            Err(e) => {
                trace.failure = Some(e.to_string());
                return Ok(trace);
            }
        };
        let merit = match exact_merit_of_record(problem, &record, MERIT_RHO) {
            Ok(m) => m,
            Err(e) => {
                trace.failure = Some(e.to_string());
                return Ok(trace);
            }
        };
        let (ub_c, ub_s) = (state.trust.ub_circle, state.trust.ub_sigma);
        let progress = state.push(record.clone(), merit);
        if let Some(p) = &pending {
            state.trust = state.trust.update(progress, p.active.0 || p.active.1, &config.trust);
            state.trust.last_active = p.active;
        }
        trace.rows.push(TraceRow {
            eval: state.history.len(),
            x: record.x,
            f: record.f,
            g: record.constraints.g_vals,
            h: record.constraints.h_vals,
            merit,
            best_merit: state.best_merit(),
            stage: pending.as_ref().and_then(|p| p.stage),
            tr_circle_ub: ub_c,
            tr_sigma_ub: ub_s,
        });
        trace.q_mu2_best.push(pending.as_ref().and_then(|p| p.q_mu2_best));
        if state.best_merit() < config.merit_tol {
            trace.converged = is_converged(state.best_merit(), config.merit_tol);
            return Ok(trace);
        }
        if state.history.len() >= config.max_evals {
            return Ok(trace);
        }
        state.iteration += 1;
        let p = match propose(&mut state, problem, config) {
            Ok(p) => p,
            Err(e) => {
                trace.failure = Some(e.to_string());
                return Ok(trace);
            }
        };
        x = p.x.clone();
        pending = Some(p);
    }
}
