//! Acquisition functions, each returning its value and gradient.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{
    factor_spd, filter_active, multiplier_matrix, stacked_jacobian, ConstrainedProblem, ConstraintEval,
};
use crate::error::{CboError, Result};
use crate::gp::{GpModel, Posterior};

/// Floor applied to posterior standard deviations before dividing by them.
pub const SIGMA_FLOOR: f64 = 1e-12;
/// Weight of the penalty terms in the composite acquisition.
pub const PENALTY_WEIGHT: f64 = 100.0;

/// Objective and constraint surrogates fitted on the same data region.
#[derive(Debug, Clone)]
pub struct SurrogateBundle {
    pub f_model: GpModel,
    pub g_models: Vec<GpModel>,
    pub h_models: Vec<GpModel>,
}

/// Posteriors of every surrogate at one point.
#[derive(Debug, Clone)]
pub struct BundlePosterior {
    pub f: Posterior,
    pub g: Vec<Posterior>,
    pub h: Vec<Posterior>,
}

impl SurrogateBundle {
    pub fn dim(&self) -> usize {
        self.f_model.training().dim()
    }

    pub fn posterior(&self, x: &[f64]) -> BundlePosterior {
        BundlePosterior {
            f: self.f_model.posterior(x),
            g: self.g_models.iter().map(|m| m.posterior(x)).collect(),
            h: self.h_models.iter().map(|m| m.posterior(x)).collect(),
        }
    }

    pub fn mu_g(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.g_models.len(), self.g_models.iter().map(|m| m.posterior(x).mu))
    }

    pub fn mu_h(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.h_models.len(), self.h_models.iter().map(|m| m.posterior(x).mu))
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

type ValGrad = (f64, DVector<f64>);

fn uc_of(p: &Posterior, omega: f64) -> ValGrad {
    if omega == 0.0 {
        return (p.mu, p.mu_grad.clone());
    }
    let (s, ds) = p.sigma(SIGMA_FLOOR);
    (p.mu - omega * s, &p.mu_grad - ds * omega)
}

fn ei_of(p: &Posterior, f_best: f64) -> ValGrad {
    let (s, ds) = p.sigma(SIGMA_FLOOR);
    let diff = f_best - p.mu;
    let z = diff / s;
    let (cdf, pdf) = (normal_cdf(z), normal_pdf(z));
    (-(diff * cdf + s * pdf), &p.mu_grad * cdf - ds * pdf)
}

fn l2_of(bp: &BundlePosterior, n: usize) -> ValGrad {
    let mut v = 0.0;
    let mut g = DVector::zeros(n);
    for p in &bp.g {
        if p.mu > 0.0 {
            v += p.mu * p.mu;
            g += &p.mu_grad * (2.0 * p.mu);
        }
    }
    for p in &bp.h {
        v += p.mu * p.mu;
        g += &p.mu_grad * (2.0 * p.mu);
    }
    (v, g)
}

fn exploration_of(bp: &BundlePosterior, n: usize) -> ValGrad {
    let mut v = 0.0;
    let mut g = DVector::zeros(n);
    for p in &bp.g {
        let (s, ds) = p.sigma(SIGMA_FLOOR);
        let e = p.mu - s;
        if e > 0.0 {
            v += e * e;
            g += (&p.mu_grad - ds) * (2.0 * e);
        }
    }
    for p in &bp.h {
        let (s, ds) = p.sigma(SIGMA_FLOOR);
        let e = p.mu.abs() - s;
        if e > 0.0 {
            v += e * e;
            g += (&p.mu_grad * p.mu.signum() - ds) * (2.0 * e);
        }
    }
    (v, g)
}

fn feasibility_of(bp: &BundlePosterior, n: usize) -> ValGrad {
    let mut factors = Vec::with_capacity(bp.g.len());
    let mut grads = Vec::with_capacity(bp.g.len());
    for p in &bp.g {
        let (s, ds) = p.sigma(SIGMA_FLOOR);
        let t = -p.mu / s;
        let dt = -&p.mu_grad / s + ds * (p.mu / (s * s));
        factors.push(normal_cdf(t));
        grads.push(dt * normal_pdf(t));
    }
    let value: f64 = factors.iter().product();
    let mut grad = DVector::zeros(n);
    for i in 0..factors.len() {
        let others: f64 = factors
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, f)| f)
            .product();
        grad += &grads[i] * others;
    }
    (value, grad)
}

fn require_no_equalities(bundle: &SurrogateBundle) -> Result<()> {
    if bundle.h_models.is_empty() {
        Ok(())
    } else {
        Err(CboError::Unsupported(
            "probability of feasibility is undefined for equality constraints".into(),
        ))
    }
}

/// `mu_f - omega sigma_f`.
pub fn acq_uc(bundle: &SurrogateBundle, x: &[f64], omega: f64) -> ValGrad {
    uc_of(&bundle.f_model.posterior(x), omega)
}

/// Negated expected improvement over `f_best`; nonpositive, to be minimized.
pub fn acq_ei(bundle: &SurrogateBundle, x: &[f64], f_best: f64) -> ValGrad {
    ei_of(&bundle.f_model.posterior(x), f_best)
}

/// `||mu_h||^2 + ||mu_g+||^2`.
pub fn acq_l2_penalty(bundle: &SurrogateBundle, x: &[f64]) -> ValGrad {
    l2_of(&bundle.posterior(x), bundle.dim())
}

/// Product over inequality surrogates of `P(g_i <= 0)`.
pub fn prob_feasibility(bundle: &SurrogateBundle, x: &[f64]) -> Result<f64> {
    require_no_equalities(bundle)?;
    Ok(feasibility_of(&bundle.posterior(x), bundle.dim()).0)
}

fn product(a: ValGrad, b: ValGrad) -> ValGrad {
    (a.0 * b.0, a.1 * b.0 + b.1 * a.0)
}

/// Expected improvement weighted by the probability of feasibility.
pub fn acq_cei(bundle: &SurrogateBundle, x: &[f64], f_best: f64) -> Result<ValGrad> {
    require_no_equalities(bundle)?;
    let bp = bundle.posterior(x);
    Ok(product(ei_of(&bp.f, f_best), feasibility_of(&bp, bundle.dim())))
}

/// Upper confidence weighted by the probability of feasibility.
pub fn acq_cuc(bundle: &SurrogateBundle, x: &[f64], omega: f64) -> Result<ValGrad> {
    require_no_equalities(bundle)?;
    let bp = bundle.posterior(x);
    Ok(product(uc_of(&bp.f, omega), feasibility_of(&bp, bundle.dim())))
}

/// Exploration penalty: `sum max(mu_g - sigma_g, 0)^2 + sum max(|mu_h| - sigma_h, 0)^2`.
pub fn acq_exploration(bundle: &SurrogateBundle, x: &[f64]) -> ValGrad {
    exploration_of(&bundle.posterior(x), bundle.dim())
}

/// `q_UC + w (q_mu2 + q_Exp)`, the default acquisition of the strong method.
pub fn acq_composite(bundle: &SurrogateBundle, x: &[f64], omega: f64, weight: f64) -> ValGrad {
    let bp = bundle.posterior(x);
    let n = bundle.dim();
    let (u, du) = uc_of(&bp.f, omega);
    let (l, dl) = l2_of(&bp, n);
    let (e, de) = exploration_of(&bp, n);
    (u + weight * (l + e), du + (dl + de) * weight)
}

/// Settings for the exact augmented Lagrangian acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianSettings {
    pub rho: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub threshold: f64,
}

impl Default for LagrangianSettings {
    fn default() -> Self {
        Self {
            rho: 100.0,
            alpha1: 100.0,
            alpha2: 100.0,
            threshold: crate::constraints::ACTIVE_THRESHOLD,
        }
    }
}

/// Exact augmented Lagrangian built from the surrogate means.
///
/// The multipliers are functions of `x`; their derivative is included in the
/// gradient by differentiating the multiplier solve, which needs the Hessians
/// of the posterior means.
pub fn acq_exact_lagrangian(
    bundle: &SurrogateBundle,
    problem: &ConstrainedProblem,
    x: &[f64],
    settings: &LagrangianSettings,
) -> Result<ValGrad> {
    let n = bundle.dim();
    let xv = DVector::from_column_slice(x);
    let (mu_f, grad_f, hess_f) = bundle.f_model.mean_hessian(x);

    let mut nl = ConstraintEval::empty(n);
    let mut g_hess = Vec::with_capacity(bundle.g_models.len());
    let mut h_hess = Vec::with_capacity(bundle.h_models.len());
    nl.g_vals = DVector::zeros(bundle.g_models.len());
    nl.g_grads = DMatrix::zeros(bundle.g_models.len(), n);
    for (i, m) in bundle.g_models.iter().enumerate() {
        let (v, g, h) = m.mean_hessian(x);
        nl.g_vals[i] = v;
        nl.g_grads.set_row(i, &g.transpose());
        g_hess.push(h);
    }
    nl.h_vals = DVector::zeros(bundle.h_models.len());
    nl.h_grads = DMatrix::zeros(bundle.h_models.len(), n);
    for (i, m) in bundle.h_models.iter().enumerate() {
        let (v, g, h) = m.mean_hessian(x);
        nl.h_vals[i] = v;
        nl.h_grads.set_row(i, &g.transpose());
        h_hess.push(h);
    }
    let all = crate::constraints::assemble_all(problem, &xv, &nl);
    let n_linear_g = all.g_vals.len() - nl.g_vals.len();
    let n_linear_h = all.h_vals.len() - nl.h_vals.len();
    let (g_vals, g_grads, keep) = filter_active(&all.g_vals, &all.g_grads, settings.threshold);
    let eval = ConstraintEval {
        g_vals,
        g_grads,
        h_vals: all.h_vals,
        h_grads: all.h_grads,
    };
    let ng = eval.g_vals.len();
    let nh = eval.h_vals.len();
    let r = ng + nh;
    let rho = settings.rho;

    // Hessian of each retained row; linear rows have none.
    let row_hess: Vec<Option<&DMatrix<f64>>> = keep
        .iter()
        .map(|&i| i.checked_sub(n_linear_g).map(|j| &g_hess[j]))
        .chain((0..nh).map(|i| i.checked_sub(n_linear_h).map(|j| &h_hess[j])))
        .collect();

    let jac = stacked_jacobian(&eval);
    let vals = DVector::from_fn(r, |i, _| if i < ng { eval.g_vals[i] } else { eval.h_vals[i - ng] });
    let (psi, chol) = if r > 0 {
        let m = multiplier_matrix(&eval, settings.alpha1, settings.alpha2);
        let chol = factor_spd(&m)?;
        let psi = chol.solve(&(-(&jac * &grad_f)));
        (psi, Some(chol))
    } else {
        (DVector::zeros(0), None)
    };

    let shifted: Vec<f64> = (0..ng).map(|i| (psi[i] / (2.0 * rho) + vals[i]).min(0.0)).collect();
    let value = mu_f + psi.dot(&vals) + rho * (vals.norm_squared() - shifted.iter().map(|s| s * s).sum::<f64>());

    let mut grad = grad_f.clone();
    let Some(chol) = chol else {
        return Ok((value, grad));
    };
    let w_grad: DVector<f64> = {
        let mut wg = DVector::zeros(n);
        for i in 0..r {
            let active = i >= ng || vals[i] > 0.0;
            if active {
                wg += jac.row(i).transpose() * (2.0 * vals[i]);
            }
        }
        wg
    };
    for k in 0..n {
        let mut d_jac = DMatrix::zeros(r, n);
        for (i, h) in row_hess.iter().enumerate() {
            if let Some(h) = h {
                d_jac.set_row(i, &h.column(k).transpose());
            }
        }
        let dvals = jac.column(k).into_owned();
        let mut d_m = &d_jac * jac.transpose() + &jac * d_jac.transpose();
        for i in 0..ng {
            d_m[(i, i)] += 2.0 * settings.alpha1 * vals[i] * dvals[i];
        }
        for i in 0..r {
            d_m[(i, i)] += settings.alpha2 * w_grad[k];
        }
        let d_rhs = -(&d_jac * &grad_f + &jac * hess_f.column(k));
        let d_psi = chol.solve(&(d_rhs - &d_m * &psi));
        let mut dk = d_psi.dot(&vals) + psi.dot(&dvals) + 2.0 * rho * vals.dot(&dvals);
        for i in 0..ng {
            dk -= 2.0 * rho * shifted[i] * (d_psi[i] / (2.0 * rho) + dvals[i]);
        }
        grad[k] += dk;
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_tables() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(3.0) - 0.998_650_101_968_37).abs() < 1e-12);
        assert!((normal_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(normal_cdf(-6.0) < 1e-8);
    }

    fn post(mu: f64, var: f64) -> Posterior {
        Posterior {
            mu,
            mu_grad: DVector::from_element(1, 0.0),
            var,
            var_grad: DVector::from_element(1, 0.0),
            var_ratio: var,
            var_ratio_grad: DVector::from_element(1, 0.0),
            var_ratio_raw: var,
        }
    }

    #[test]
    fn ei_examples() {
        assert!(ei_of(&post(1.0, 0.0), 1.0).0.abs() < 1e-11);
        assert!((ei_of(&post(1.0, 1.0), 1.0).0 + 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!((ei_of(&post(0.0, 0.0), 2.0).0 + 2.0).abs() < 1e-12);
        let mut last = 0.0;
        for k in 1..50 {
            let s = k as f64 * 0.1;
            let v = ei_of(&post(0.0, s * s), 0.0).0;
            assert!(v <= 0.0 && v <= last);
            last = v;
        }
    }

    #[test]
    fn exploration_examples() {
        let bp = BundlePosterior {
            f: post(0.0, 1.0),
            g: vec![],
            h: vec![post(2.0, 1.0)],
        };
        assert!((exploration_of(&bp, 1).0 - 1.0).abs() < 1e-14);
        let bp = BundlePosterior {
            f: post(0.0, 1.0),
            g: vec![post(0.5, 1.0)],
            h: vec![post(-0.9, 1.0)],
        };
        assert_eq!(exploration_of(&bp, 1).0, 0.0);
    }

    #[test]
    fn l2_examples() {
        let bp = BundlePosterior {
            f: post(0.0, 1.0),
            g: vec![post(-1.0, 1.0)],
            h: vec![post(0.3, 1.0)],
        };
        assert!((l2_of(&bp, 1).0 - 0.09).abs() < 1e-15);
    }

    #[test]
    fn feasibility_examples() {
        let one = |mu| BundlePosterior {
            f: post(0.0, 1.0),
            g: vec![post(mu, 1.0)],
            h: vec![],
        };
        assert!((feasibility_of(&one(0.0), 1).0 - 0.5).abs() < 1e-15);
        assert!((feasibility_of(&one(-3.0), 1).0 - 0.998_650_101_968_37).abs() < 1e-12);
        let two = BundlePosterior {
            f: post(0.0, 1.0),
            g: vec![post(-1.0, 1.0), post(0.5, 4.0)],
            h: vec![],
        };
        let p = feasibility_of(&two, 1).0;
        assert!((p - normal_cdf(1.0) * normal_cdf(-0.25)).abs() < 1e-15);
    }
}
