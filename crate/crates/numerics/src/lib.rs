//! Numerical core for the behavioral encoder: dense row-major tensors, a
//! dynamic reverse-mode operation record, Adam, and finite-difference
//! gradient checking.
//!
//! Training runs in `f32`; every op is generic over [`Scalar`] so the same
//! model code can be replayed in `f64` for gradient checks.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::NumericsError;
pub use gradcheck::{gradcheck, gradcheck_with, GradcheckOptions, GradcheckReport};
pub use graph::{Fault, Gradients, Graph, Var};
pub use params::{ParamStore, ParamSpec};
pub use tensor::{Scalar, Tensor};

pub type Result<T> = std::result::Result<T, NumericsError>;
