//! Dense `f64` tensors, a reverse-mode tape, and the Adam optimizer.

mod adam;
mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig};
pub use graph::{ElementwiseOp, Graph, NodeId};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl NumericsError {
    pub(crate) fn dimension(op: &'static str, detail: String) -> Self {
        Self::Dimension { op, detail }
    }
}
