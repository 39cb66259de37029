//! Deterministic neural kernel for the TCN.
//!
//! Everything runs on [`Grid`], a dense `(channels, time)` array of `f64`
//! stored channel-major. Layers expose explicit forward/backward pairs; there
//! is no autograd graph. Gradients share the parameter types (a `ConvParams`
//! full of gradients is still a `ConvParams`), which keeps the optimizer and
//! the checkpoint code oblivious to layer structure.

mod adam;
pub(crate) mod cell;
pub(crate) mod conv;
mod gradcheck;
mod grid;
mod norm;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cell::{residual_cell_forward, residual_cell_grad, CellCache, ResidualCell};
pub use conv::{conv1d_causal, conv1d_causal_grad, ConvParams};
pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use grid::Grid;
pub use norm::{channel_norm, channel_norm_grad, relu, relu_grad, sigmoid, softplus, ChannelNorm, NormCache};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in tensor {tensor} at index {index}")]
    NonFiniteGradient { tensor: usize, index: usize },
}

/// Access to a layer's parameter tensors in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites every tensor from a flat vector produced by [`Params::flat`].
    fn set_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(NnError::Shape(format!("flat length {} != {n}", flat.len())));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
