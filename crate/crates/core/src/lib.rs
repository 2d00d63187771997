//! Physics-informed RBF networks for Black-Scholes option pricing.

mod blocked;
pub mod cli;
pub mod error;
pub mod kernels;
pub mod network;
pub mod optimizer;
pub mod oracle;
pub mod problems;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
pub use kernels::KernelKind;
pub use network::{LossBreakdown, ParamVector, RbfNetwork, ShapeMode};
pub use problems::BsProblem;
