//! Local Bayesian optimization with gradient-enhanced Gaussian-process
//! surrogates and nonlinear constraints.

pub mod acquisition;
pub mod constraints;
pub mod error;
pub mod gp;
pub mod inner_solver;
pub mod kernels;
pub mod optimizer;
pub mod problems;
pub mod sampling;
pub mod trace;
pub mod trust;

pub use acquisition::SurrogateBundle;
pub use constraints::{ConstrainedProblem, ConstraintEval, EvalRecord, Multipliers};
pub use error::{CboError, Result};
pub use gp::{GpModel, HyperSearch, Posterior, TrainingSet};
pub use kernels::{Gaussian, Kernel, KernelParams};
pub use optimizer::{run, BoConfig, BoState, Method, Proposal};
pub use problems::TestProblem;
pub use trace::{RunTrace, TraceRow};
pub use trust::{TrustConfig, TrustState};
