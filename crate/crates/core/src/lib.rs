//! Taylor-mode automatic differentiation with stochastic estimators for
//! high-order, high-dimensional differential operators.
//!
//! The crate is layered bottom-up:
//!
//! - [`graph`]: vector expression graphs, forward evaluation and
//!   reverse-mode parameter gradients.
//! - [`jet`]: univariate Taylor-mode pushforward of k-jets, implemented as
//!   graph-to-graph expansion so parameter gradients come for free.
//! - [`operator`]: sparse coefficient tensors and jet plans that extract
//!   arbitrary mixed partial derivatives.
//! - [`estimators`]: sparse and dense randomized operator estimators.
//! - [`pinn`]: physics-informed network training with amortized residuals.
//! - [`oracle`]: finite differences and exhaustive expectations used as
//!   independent ground truth.

pub mod error;
pub mod estimators;
pub mod graph;
pub mod jet;
pub mod operator;
pub mod oracle;
pub mod pinn;

pub use error::{Error, Result};
