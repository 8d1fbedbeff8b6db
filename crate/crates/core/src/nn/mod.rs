//! Minimal neural-network substrate: dense MLPs with hand-written backprop,
//! orthogonal initialization, Adam, and global gradient-norm clipping.

mod adam;
pub mod checkpoint;
mod init;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use init::orthogonal_init;
pub use matrix::Matrix;
pub use mlp::{Activation, Mlp, MlpCache, MlpGrads};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cache does not belong to the current parameters")]
    StaleCache,
    #[error("non-finite gradient in tensor `{0}`")]
    NonFinite(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A named parameter tensor. Vectors are stored as `1 x n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    name: String,
    value: Matrix,
}

impl Tensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.value
    }

    pub fn data(&self) -> &[f64] {
        self.value.as_slice()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.value.as_mut_slice()
    }
}

/// L2 norm over every gradient tensor taken together.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
    }
    norm
}
