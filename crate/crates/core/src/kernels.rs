//! Stationary kernels and the cross-derivatives required by gradient-enhanced
//! covariance matrices.
//!
//! Only the squared-exponential (Gaussian) kernel is provided. The [`Kernel`]
//! trait exposes the value together with its first and mixed second
//! derivatives so that other stationary kernels can be slotted in later.

use nalgebra::{DMatrix, DVector};

use crate::error::{CboError, Result};

/// Inverse length scales, one strictly positive entry per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    gamma: DVector<f64>,
}

impl KernelParams {
    pub fn new(gamma: DVector<f64>) -> Result<Self> {
        if gamma.is_empty() {
            return Err(CboError::Input("empty hyperparameter vector".into()));
        }
        if let Some(g) = gamma.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(CboError::Input(format!(
                "hyperparameters must be finite and positive, got {g}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn from_slice(gamma: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(gamma))
    }

    /// Builds parameters from log-space coordinates `theta_i = ln(gamma_i)`.
    pub fn from_log(theta: &DVector<f64>) -> Result<Self> {
        Self::new(theta.map(f64::exp))
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn log_gamma(&self) -> DVector<f64> {
        self.gamma.map(f64::ln)
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Scaled separation `r_i = gamma_i (x_i - y_i)`.
    pub fn scaled_diff(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        let n = self.dim();
        if x.len() != n || y.len() != n {
            return Err(CboError::Input(format!(
                "dimension mismatch: x has {}, y has {}, gamma has {n}",
                x.len(),
                y.len()
            )));
        }
        Ok(DVector::from_fn(n, |i, _| self.gamma[i] * (x[i] - y[i])))
    }
}

/// Kernel value with first and mixed second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDerivatives {
    pub value: f64,
    /// `dk/dx_i`
    pub d_dx: DVector<f64>,
    /// `dk/dy_j`
    pub d_dy: DVector<f64>,
    /// `d2k/dx_i dy_j`, row `i`, column `j`
    pub d2_dxdy: DMatrix<f64>,
}

/// A stationary kernel `k(x, y; gamma)` with unit variance (`k(x, x) = 1`).
pub trait Kernel: Send + Sync {
    fn value(&self, x: &[f64], y: &[f64], params: &KernelParams) -> Result<f64>;
    fn derivatives(&self, x: &[f64], y: &[f64], params: &KernelParams) -> Result<KernelDerivatives>;
}

/// `k(x, y) = exp(-|r|^2 / 2)` with `r_i = gamma_i (x_i - y_i)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Gaussian;

impl Kernel for Gaussian {
    fn value(&self, x: &[f64], y: &[f64], params: &KernelParams) -> Result<f64> {
        let r = params.scaled_diff(x, y)?;
        Ok((-0.5 * r.norm_squared()).exp())
    }

    fn derivatives(&self, x: &[f64], y: &[f64], params: &KernelParams) -> Result<KernelDerivatives> {
        let r = params.scaled_diff(x, y)?;
        let g = params.gamma();
        let n = r.len();
        let k = (-0.5 * r.norm_squared()).exp();
        // dk/dx_i = -gamma_i^2 (x_i - y_i) k = -gamma_i r_i k
        let d_dx = DVector::from_fn(n, |i, _| -g[i] * r[i] * k);
        let d_dy = -&d_dx;
        let d2_dxdy = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { g[i] * g[i] } else { 0.0 };
            (diag - g[i] * r[i] * g[j] * r[j]) * k
        });
        Ok(KernelDerivatives {
            value: k,
            d_dx,
            d_dy,
            d2_dxdy,
        })
    }
}

/// Free-function form of [`Gaussian::value`].
pub fn kernel_value(x: &[f64], y: &[f64], params: &KernelParams) -> Result<f64> {
    Gaussian.value(x, y, params)
}

/// Free-function form of [`Gaussian::derivatives`].
pub fn kernel_derivatives(x: &[f64], y: &[f64], params: &KernelParams) -> Result<KernelDerivatives> {
    Gaussian.derivatives(x, y, params)
}
