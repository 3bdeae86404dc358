//! Gradient-enhanced Gaussian process with guaranteed-conditioning
//! covariance assembly.
//!
//! Observations are ordered in blocks: all function values first, then the
//! first partial derivative at every point, then the second, and so on. Row
//! `b * n_x + a` holds block `b` (0 = value, `i + 1` = `df/dx_i`) at point `a`.
//!
//! The covariance is preconditioned with `P = diag(sqrt(diag(K)))`, which for
//! the Gaussian kernel turns the gradient-enhanced kernel matrix into a
//! correlation matrix with unit diagonal. A nugget sized from the largest
//! absolute row sum then bounds the condition number of the factored matrix by
//! `condmax` (Gershgorin).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CboError, Result};
use crate::inner_solver::bounded::{minimize_box, BoxOptions};
use crate::kernels::{kernel_derivatives, KernelParams};
use crate::sampling::latin_hypercube;

pub const DEFAULT_CONDMAX: f64 = 1e10;

/// Evaluation points together with the block-ordered values and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    x: DMatrix<f64>,
    f_grad: DVector<f64>,
}

impl TrainingSet {
    /// `x` is `n_x x n_d`; `f_grad` has length `n_x (n_d + 1)` in block order.
    pub fn new(x: DMatrix<f64>, f_grad: DVector<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || d == 0 {
            return Err(CboError::Input("empty training set".into()));
        }
        if f_grad.len() != n * (d + 1) {
            return Err(CboError::Input(format!(
                "observation vector has length {}, expected {}",
                f_grad.len(),
                n * (d + 1)
            )));
        }
        if x.iter().chain(f_grad.iter()).any(|v| !v.is_finite()) {
            return Err(CboError::Input("non-finite training data".into()));
        }
        for a in 0..n {
            for b in 0..a {
                if (0..d).all(|i| x[(a, i)] == x[(b, i)]) {
                    return Err(CboError::Input(format!("training points {b} and {a} coincide")));
                }
            }
        }
        Ok(Self { x, f_grad })
    }

    pub fn from_points(points: &[DVector<f64>], values: &[f64], gradients: &[DVector<f64>]) -> Result<Self> {
        let n = points.len();
        if n == 0 || values.len() != n || gradients.len() != n {
            return Err(CboError::Input("points, values and gradients differ in count".into()));
        }
        let d = points[0].len();
        if points.iter().chain(gradients).any(|p| p.len() != d) {
            return Err(CboError::Input("inconsistent point dimensions".into()));
        }
        let x = DMatrix::from_fn(n, d, |a, i| points[a][i]);
        let f_grad = DVector::from_fn(n * (d + 1), |r, _| {
            let (block, a) = (r / n, r % n);
            if block == 0 {
                values[a]
            } else {
                gradients[a][block - 1]
            }
        });
        Self::new(x, f_grad)
    }

    pub fn n_points(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn f_grad(&self) -> &DVector<f64> {
        &self.f_grad
    }

    pub fn point(&self, a: usize) -> Vec<f64> {
        self.x.row(a).iter().copied().collect()
    }

    /// Function values (the first block of `f_grad`).
    pub fn values(&self) -> &[f64] {
        &self.f_grad.as_slice()[..self.n_points()]
    }

    /// Gradient of the function at training point `a`.
    pub fn gradient(&self, a: usize) -> DVector<f64> {
        let n = self.n_points();
        DVector::from_fn(self.dim(), |i, _| self.f_grad[(i + 1) * n + a])
    }

    fn size(&self) -> usize {
        self.n_points() * (self.dim() + 1)
    }
}

/// Unscaled gradient-enhanced kernel matrix assembled from the kernel
/// derivatives.
pub fn build_grad_kernel_matrix(x: &DMatrix<f64>, params: &KernelParams) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if d != params.dim() {
        return Err(CboError::Input(format!(
            "points have dimension {d}, hyperparameters {}",
            params.dim()
        )));
    }
    if n == 0 {
        return Err(CboError::Input("no points".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|a| x.row(a).iter().copied().collect()).collect();
    for a in 0..n {
        for b in 0..a {
            if rows[a] == rows[b] {
                return Err(CboError::Input(format!("points {b} and {a} coincide")));
            }
        }
    }
    let m = n * (d + 1);
    let mut kg = DMatrix::zeros(m, m);
    for a in 0..n {
        for b in 0..n {
            let kd = kernel_derivatives(&rows[a], &rows[b], params)?;
            kg[(a, b)] = kd.value;
            for j in 0..d {
                kg[(a, (j + 1) * n + b)] = kd.d_dy[j];
                kg[((j + 1) * n + a, b)] = kd.d_dx[j];
                for i in 0..d {
                    kg[((i + 1) * n + a, (j + 1) * n + b)] = kd.d2_dxdy[(i, j)];
                }
            }
        }
    }
    Ok(kg)
}

/// Diagonal preconditioner, nugget weights and nugget.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    /// Diagonal of `P`.
    pub p: DVector<f64>,
    /// Diagonal of `W = P^2`.
    pub w: DVector<f64>,
    pub eta: f64,
}

/// Chooses `P`, `W` and the nugget so that `P^-1 (K + eta W) P^-1` has a
/// condition number no larger than `condmax`.
pub fn precondition(kg: &DMatrix<f64>, condmax: f64) -> Result<Preconditioner> {
    if !(condmax > 1.0) {
        return Err(CboError::Input(format!("condmax must exceed 1, got {condmax}")));
    }
    if !kg.is_square() {
        return Err(CboError::Input("kernel matrix must be square".into()));
    }
    let diag = kg.diagonal();
    if let Some(v) = diag.iter().find(|v| !(**v > 0.0)) {
        return Err(CboError::Numeric(format!("nonpositive diagonal entry {v}")));
    }
    let p = diag.map(f64::sqrt);
    let m = kg.nrows();
    let max_row = (0..m)
        .map(|i| (0..m).map(|j| (kg[(i, j)] / (p[i] * p[j])).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(Preconditioner {
        w: p.map(|v| v * v),
        p,
        eta: max_row / (condmax - 1.0),
    })
}

fn cholesky_lower(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| CboError::Numeric("Cholesky factorization failed".into()))
}

fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = b.clone();
    l.solve_lower_triangular_mut(&mut v);
    l.tr_solve_lower_triangular_mut(&mut v);
    v
}

/// Closed-form constant mean and kernel variance for given preconditioning.
pub fn fit_beta_sigk2(
    training: &TrainingSet,
    params: &KernelParams,
    eta: f64,
    w: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<(f64, f64)> {
    let kg = build_grad_kernel_matrix(training.x(), params)?;
    let m = kg.nrows();
    if w.len() != m || p.len() != m {
        return Err(CboError::Input("preconditioner size mismatch".into()));
    }
    let ksc = DMatrix::from_fn(m, m, |i, j| {
        let nug = if i == j { eta * w[i] } else { 0.0 };
        (kg[(i, j)] + nug) / (p[i] * p[j])
    });
    let l = cholesky_lower(ksc)?;
    let n = training.n_points();
    let z = DVector::from_fn(m, |i, _| training.f_grad()[i] / p[i]);
    let e = DVector::from_fn(m, |i, _| if i < n { 1.0 / p[i] } else { 0.0 });
    let ki_e = chol_solve(&l, &e);
    let beta = ki_e.dot(&z) / ki_e.dot(&e);
    let r = z - e * beta;
    let sig = r.dot(&chol_solve(&l, &r)) / m as f64;
    Ok((beta, sig.max(0.0)))
}

/// Correlation matrix `P^-1 K P^-1` built directly from scaled separations.
fn correlation_matrix(x: &DMatrix<f64>, gamma: &DVector<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let m = n * (d + 1);
    let mut kc = DMatrix::zeros(m, m);
    let mut u = vec![0.0; d];
    for a in 0..n {
        for b in 0..=a {
            let mut s2 = 0.0;
            for i in 0..d {
                u[i] = gamma[i] * (x[(a, i)] - x[(b, i)]);
                s2 += u[i] * u[i];
            }
            let k = (-0.5 * s2).exp();
            fill_pair(&mut kc, n, d, a, b, &u, k);
            if a != b {
                let neg: Vec<f64> = u.iter().map(|v| -v).collect();
                fill_pair(&mut kc, n, d, b, a, &neg, k);
            }
        }
    }
    kc
}

fn fill_pair(kc: &mut DMatrix<f64>, n: usize, d: usize, a: usize, b: usize, u: &[f64], k: f64) {
    kc[(a, b)] = k;
    for j in 0..d {
        kc[(a, (j + 1) * n + b)] = u[j] * k;
        kc[((j + 1) * n + a, b)] = -u[j] * k;
        for i in 0..d {
            let delta = if i == j { 1.0 } else { 0.0 };
            kc[((i + 1) * n + a, (j + 1) * n + b)] = (delta - u[i] * u[j]) * k;
        }
    }
}

fn preconditioner_diag(n: usize, gamma: &DVector<f64>) -> DVector<f64> {
    let d = gamma.len();
    DVector::from_fn(n * (d + 1), |r, _| if r < n { 1.0 } else { gamma[r / n - 1] })
}

fn max_abs_row(kc: &DMatrix<f64>) -> (usize, f64) {
    let m = kc.nrows();
    (0..m)
        .map(|i| (i, kc.row(i).iter().map(|v| v.abs()).sum::<f64>()))
        .fold(
            (0, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
}

/// Posterior mean and variance at one point, with gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mu: f64,
    pub mu_grad: DVector<f64>,
    /// Variance, clamped at zero.
    pub var: f64,
    pub var_grad: DVector<f64>,
    /// `var / sigma_K^2`, clamped to `[0, 1]`.
    pub var_ratio: f64,
    pub var_ratio_grad: DVector<f64>,
    /// `var / sigma_K^2` before clamping.
    pub var_ratio_raw: f64,
}

impl Posterior {
    /// Standard deviation floored at `floor`, with its gradient.
    pub fn sigma(&self, floor: f64) -> (f64, DVector<f64>) {
        let s = self.var.sqrt();
        if s <= floor {
            (floor, DVector::zeros(self.mu_grad.len()))
        } else {
            (s, &self.var_grad / (2.0 * s))
        }
    }
}

/// A fitted gradient-enhanced GP. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    training: TrainingSet,
    params: KernelParams,
    beta: f64,
    sig_k2: f64,
    eta: f64,
    p: DVector<f64>,
    chol: DMatrix<f64>,
    /// `(P^-1 (K + eta W) P^-1)^-1 P^-1 (f_grad - 1_mod beta)`.
    alpha: DVector<f64>,
}

impl GpModel {
    pub fn fit(training: TrainingSet, params: KernelParams, condmax: f64) -> Result<Self> {
        if params.dim() != training.dim() {
            return Err(CboError::Input("hyperparameter and data dimensions differ".into()));
        }
        if !(condmax > 1.0) {
            return Err(CboError::Input(format!("condmax must exceed 1, got {condmax}")));
        }
        let n = training.n_points();
        let m = training.size();
        let gamma = params.gamma();
        let mut kc = correlation_matrix(training.x(), gamma);
        let (_, row) = max_abs_row(&kc);
        let eta = row / (condmax - 1.0);
        for i in 0..m {
            kc[(i, i)] += eta;
        }
        let chol = cholesky_lower(kc)?;
        let p = preconditioner_diag(n, gamma);
        let z = training.f_grad().component_div(&p);
        let e = DVector::from_fn(m, |i, _| if i < n { 1.0 } else { 0.0 });
        let ki_e = chol_solve(&chol, &e);
        let beta = ki_e.dot(&z) / ki_e.dot(&e);
        let r = z - e * beta;
        let alpha = chol_solve(&chol, &r);
        let sig_k2 = (r.dot(&alpha) / m as f64).max(0.0);
        Ok(Self {
            training,
            params,
            beta,
            sig_k2,
            eta,
            p,
            chol,
            alpha,
        })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sig_k2(&self) -> f64 {
        self.sig_k2
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn preconditioner(&self) -> &DVector<f64> {
        &self.p
    }

    /// Lower Cholesky factor of the preconditioned kernel-plus-nugget matrix.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `P^-1 (K + eta W) P^-1`, rebuilt from scratch.
    pub fn preconditioned_matrix(&self) -> DMatrix<f64> {
        let mut kc = correlation_matrix(self.training.x(), self.params.gamma());
        for i in 0..kc.nrows() {
            kc[(i, i)] += self.eta;
        }
        kc
    }

    fn scaled_separations(&self, x: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let xt = self.training.x();
        let (n, d) = xt.shape();
        let g = self.params.gamma();
        let mut u = DMatrix::zeros(n, d);
        let mut k = DVector::zeros(n);
        for a in 0..n {
            let mut s2 = 0.0;
            for i in 0..d {
                let v = g[i] * (xt[(a, i)] - x[i]);
                u[(a, i)] = v;
                s2 += v * v;
            }
            k[a] = (-0.5 * s2).exp();
        }
        (u, k)
    }

    /// `J^T w` where `J` is the Jacobian of the scaled cross-covariance
    /// vector with respect to the query point.
    fn cross_jacobian_tr(&self, u: &DMatrix<f64>, k: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let (n, d) = u.shape();
        let g = self.params.gamma();
        let mut out = DVector::zeros(d);
        for a in 0..n {
            let ka = k[a];
            if ka == 0.0 {
                continue;
            }
            let s: f64 = (0..d).map(|i| w[(i + 1) * n + a] * u[(a, i)]).sum();
            let coeff = (w[a] - s) * ka;
            for j in 0..d {
                out[j] += coeff * g[j] * u[(a, j)] + w[(j + 1) * n + a] * g[j] * ka;
            }
        }
        out
    }

    fn cross_vector(&self, u: &DMatrix<f64>, k: &DVector<f64>) -> DVector<f64> {
        let (n, d) = u.shape();
        DVector::from_fn(n * (d + 1), |r, _| {
            let (block, a) = (r / n, r % n);
            if block == 0 {
                k[a]
            } else {
                -u[(a, block - 1)] * k[a]
            }
        })
    }

    pub fn posterior(&self, x: &[f64]) -> Posterior {
        debug_assert_eq!(x.len(), self.training.dim());
        let (u, k) = self.scaled_separations(x);
        let kc = self.cross_vector(&u, &k);
        let mu = self.beta + kc.dot(&self.alpha);
        let mu_grad = self.cross_jacobian_tr(&u, &k, &self.alpha);

        let mut v = kc.clone();
        self.chol.solve_lower_triangular_mut(&mut v);
        let ratio_raw = 1.0 - v.norm_squared();
        self.chol.tr_solve_lower_triangular_mut(&mut v);
        let ratio_grad = self.cross_jacobian_tr(&u, &k, &v) * -2.0;
        let ratio = ratio_raw.clamp(0.0, 1.0);
        Posterior {
            mu,
            mu_grad,
            var: self.sig_k2 * ratio,
            var_grad: &ratio_grad * self.sig_k2,
            var_ratio: ratio,
            var_ratio_grad: ratio_grad,
            var_ratio_raw: ratio_raw,
        }
    }

    /// Posterior mean with its gradient and Hessian.
    pub fn mean_hessian(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (u, k) = self.scaled_separations(x);
        let (n, d) = u.shape();
        let g = self.params.gamma();
        let al = &self.alpha;
        let kc = self.cross_vector(&u, &k);
        let mu = self.beta + kc.dot(al);
        let grad = self.cross_jacobian_tr(&u, &k, al);
        let mut hess = DMatrix::zeros(d, d);
        for a in 0..n {
            let ka = k[a];
            if ka == 0.0 {
                continue;
            }
            let s: f64 = (0..d).map(|i| al[(i + 1) * n + a] * u[(a, i)]).sum();
            for j in 0..d {
                let uj = u[(a, j)];
                let aj = al[(j + 1) * n + a];
                for l in 0..=j {
                    let ul = u[(a, l)];
                    let al_ = al[(l + 1) * n + a];
                    let delta = if j == l { 1.0 } else { 0.0 };
                    let value_part = al[a] * g[j] * g[l] * (uj * ul - delta);
                    let deriv_part = g[j] * aj * g[l] * ul + g[l] * al_ * g[j] * uj + delta * g[j] * g[j] * s
                        - g[j] * g[l] * uj * ul * s;
                    let h = (value_part + deriv_part) * ka;
                    hess[(j, l)] += h;
                    if l != j {
                        hess[(l, j)] += h;
                    }
                }
            }
        }
        (mu, grad, hess)
    }
}

/// Concentrated log marginal likelihood (constants dropped) with its gradient
/// with respect to `ln(gamma)`.
fn likelihood(
    training: &TrainingSet,
    theta: &DVector<f64>,
    condmax: f64,
    want_grad: bool,
) -> Result<(f64, Option<DVector<f64>>)> {
    let (n, d) = training.x().shape();
    let m = n * (d + 1);
    let gamma = theta.map(f64::exp);
    let mut kc = correlation_matrix(training.x(), &gamma);
    let (row_star, row_sum) = max_abs_row(&kc);
    let eta = row_sum / (condmax - 1.0);
    let signs: Vec<f64> = if want_grad {
        kc.row(row_star).iter().map(|v| v.signum()).collect()
    } else {
        Vec::new()
    };
    for i in 0..m {
        kc[(i, i)] += eta;
    }
    let l = cholesky_lower(kc)?;
    let p = preconditioner_diag(n, &gamma);
    let z = training.f_grad().component_div(&p);
    let e = DVector::from_fn(m, |i, _| if i < n { 1.0 } else { 0.0 });
    let ki_e = chol_solve(&l, &e);
    let beta = ki_e.dot(&z) / ki_e.dot(&e);
    let r = &z - &e * beta;
    let a = chol_solve(&l, &r);
    let quad = r.dot(&a).max(f64::MIN_POSITIVE * m as f64);
    let sig2 = quad / m as f64;
    let ln_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = -0.5 * m as f64 * sig2.ln() - 0.5 * ln_det - n as f64 * theta.sum();
    if !want_grad {
        return Ok((value, None));
    }

    let kinv = {
        let mut inv = DMatrix::identity(m, m);
        l.solve_lower_triangular_mut(&mut inv);
        l.tr_solve_lower_triangular_mut(&mut inv);
        inv
    };
    let tr_kinv = kinv.trace();
    let aa = a.norm_squared();
    let x = training.x();
    let mut t1 = vec![0.0; d];
    let mut t2 = vec![0.0; d];
    let mut deta = vec![0.0; d];
    let mut u = vec![0.0; d];
    let idx = |block: usize, pt: usize| block * n + pt;
    for pa in 0..n {
        for pb in 0..n {
            let mut s2 = 0.0;
            for i in 0..d {
                u[i] = gamma[i] * (x[(pa, i)] - x[(pb, i)]);
                s2 += u[i] * u[i];
            }
            let k = (-0.5 * s2).exp();
            for ll in 0..d {
                let ul = u[ll];
                let ul2k = ul * ul * k;
                for bi in 0..=d {
                    let r_ = idx(bi, pa);
                    for bj in 0..=d {
                        let c_ = idx(bj, pb);
                        let dk = match (bi, bj) {
                            (0, 0) => -ul2k,
                            (0, j) => {
                                let j = j - 1;
                                (if j == ll { ul * k } else { 0.0 }) - u[j] * ul2k
                            }
                            (i, 0) => {
                                let i = i - 1;
                                -(if i == ll { ul * k } else { 0.0 }) + u[i] * ul2k
                            }
                            (i, j) => {
                                let (i, j) = (i - 1, j - 1);
                                let mut v = 0.0;
                                if i == ll {
                                    v -= ul * u[j] * k;
                                }
                                if j == ll {
                                    v -= u[i] * ul * k;
                                }
                                let delta = if i == j { 1.0 } else { 0.0 };
                                v - (delta - u[i] * u[j]) * ul2k
                            }
                        };
                        if dk == 0.0 {
                            continue;
                        }
                        t1[ll] += a[r_] * a[c_] * dk;
                        t2[ll] += kinv[(r_, c_)] * dk;
                        if r_ == row_star {
                            deta[ll] += signs[c_] * dk;
                        }
                    }
                }
            }
        }
    }
    let mut grad = DVector::zeros(d);
    for ll in 0..d {
        let de = deta[ll] / (condmax - 1.0);
        let dquad_k = t1[ll] + de * aa;
        // z on derivative block ll scales as 1/gamma_ll
        let a_dz: f64 = (0..n).map(|pt| -a[idx(ll + 1, pt)] * z[idx(ll + 1, pt)]).sum();
        let dquad = -dquad_k + 2.0 * a_dz;
        let dlogdet = t2[ll] + de * tr_kinv;
        grad[ll] = -0.5 * m as f64 * dquad / quad - 0.5 * dlogdet - n as f64;
    }
    Ok((value, Some(grad)))
}

/// Concentrated log marginal likelihood of `params` on `training`.
pub fn log_marginal_likelihood(params: &KernelParams, training: &TrainingSet, condmax: f64) -> Result<f64> {
    if params.dim() != training.dim() {
        return Err(CboError::Input("hyperparameter and data dimensions differ".into()));
    }
    Ok(likelihood(training, &params.log_gamma(), condmax, false)?.0)
}

/// Likelihood together with its gradient with respect to `ln(gamma)`.
pub fn log_marginal_likelihood_grad(
    params: &KernelParams,
    training: &TrainingSet,
    condmax: f64,
) -> Result<(f64, DVector<f64>)> {
    if params.dim() != training.dim() {
        return Err(CboError::Input("hyperparameter and data dimensions differ".into()));
    }
    let (v, g) = likelihood(training, &params.log_gamma(), condmax, true)?;
    Ok((v, g.expect("gradient requested")))
}

/// Settings for the likelihood maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSearch {
    pub n_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Search `gamma_i` in `[10^-decades / l_i, 10^decades / l_i]`, `l_i` the
    /// coordinate range of the data.
    pub decades: f64,
    /// Range used when the data has zero extent in every coordinate.
    pub fallback_scale: f64,
    /// Replaces the first sampled candidate, typically the previous fit.
    pub warm_start: Option<KernelParams>,
}

impl Default for HyperSearch {
    fn default() -> Self {
        Self {
            n_starts: 50,
            seed: 0,
            max_iter: 100,
            rel_tol: 1e-8,
            decades: 2.0,
            fallback_scale: 1.0,
            warm_start: None,
        }
    }
}

/// Log-space box for the hyperparameter search.
pub fn hyper_bounds(training: &TrainingSet, search: &HyperSearch) -> (Vec<f64>, Vec<f64>) {
    let x = training.x();
    let d = x.ncols();
    let ranges: Vec<f64> = (0..d)
        .map(|i| {
            let col = x.column(i);
            col.max() - col.min()
        })
        .collect();
    let widest = ranges.iter().copied().fold(0.0, f64::max);
    let span = search.decades * std::f64::consts::LN_10;
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for r in ranges {
        let scale = if r > 1e-12 * widest && r > 0.0 {
            r
        } else if widest > 0.0 {
            widest
        } else {
            search.fallback_scale
        };
        lo.push(-scale.ln() - span);
        hi.push(-scale.ln() + span);
    }
    (lo, hi)
}

/// Maximizes the likelihood: scores `n_starts` Latin-hypercube candidates in
/// log space, then runs a bounded quasi-Newton ascent from the best.
pub fn select_hyperparameters(training: &TrainingSet, condmax: f64, search: &HyperSearch) -> Result<KernelParams> {
    if search.n_starts == 0 {
        return Err(CboError::Input(
            "at least one hyperparameter candidate is required".into(),
        ));
    }
    let (lo, hi) = hyper_bounds(training, search);
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut candidates = latin_hypercube(search.n_starts, &lo, &hi, &mut rng);
    if let Some(warm) = &search.warm_start {
        if warm.dim() == training.dim() {
            let mut t = warm.log_gamma();
            for i in 0..t.len() {
                t[i] = t[i].clamp(lo[i], hi[i]);
            }
            candidates[0] = t;
        }
    }
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|t| match likelihood(training, t, condmax, false) {
            Ok((v, _)) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        })
        .collect();
    let (best_idx, best_score) =
        scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &s)| if s > b.1 { (i, s) } else { b });
    if !best_score.is_finite() {
        return Err(CboError::Numeric("likelihood undefined at every candidate".into()));
    }
    let start = candidates[best_idx].clone();
    let opts = BoxOptions {
        max_iter: search.max_iter,
        grad_tol: 1e-8,
        rel_tol: search.rel_tol,
    };
    let res = minimize_box(
        |t| match likelihood(training, t, condmax, true) {
            Ok((v, Some(g))) if v.is_finite() => (-v, -g),
            _ => (f64::INFINITY, DVector::zeros(t.len())),
        },
        &start,
        &lo,
        &hi,
        &opts,
    );
    let theta = if res.value.is_finite() && -res.value >= best_score {
        res.x
    } else {
        start
    };
    KernelParams::from_log(&theta)
}

/// Selects hyperparameters and fits the model in one call.
pub fn fit_auto(training: TrainingSet, condmax: f64, search: &HyperSearch) -> Result<GpModel> {
    let params = select_hyperparameters(&training, condmax, search)?;
    GpModel::fit(training, params, condmax)
}
