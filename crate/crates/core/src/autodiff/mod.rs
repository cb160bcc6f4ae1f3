//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::sigmoid;
pub use params::ParamStore;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
