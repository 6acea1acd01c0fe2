//! Last-iterate analysis toolkit for smooth convex-concave saddle-point problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`problem`]: saddle points, monotone operators and the bilinear instance family
//!   `f(x, y) = xᵀMy + b₁ᵀx + b₂ᵀy` (including the `M = νI` hard instances).
//! - [`metrics`]: Hamiltonian, primal-dual gaps over balls, function-value loss.
//! - [`solvers`]: extragradient (constant and time-varying step), proximal point,
//!   simultaneous gradient descent-ascent and iterate averaging, all producing [`solvers::Trace`]s.
//! - [`scli`]: stationary canonical linear iterative (1-SCLI) methods given as polynomials
//!   in the operator matrix, their closed-form iterates and worst-case instance search.
//! - [`theory`]: randomized verifiers for the matrix and polynomial inequalities the
//!   convergence analysis relies on.
//! - [`harness`]: experiment grids, rate fitting, bound checks and reports.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod poly;
pub mod problem;
pub mod scli;
pub mod solvers;
pub mod theory;

pub use error::{Error, Result};
pub use metrics::{GapRegion, LossEvaluator, LossRecord};
pub use problem::{BilinearInstance, HardInstanceParams, OperatorHandle, SaddlePoint};
pub use scli::ScliSpec;
pub use solvers::{Method, SolverConfig, StepRule, Trace};
