//! Reverse-mode automatic differentiation over `f64` NCHW tensors.
//!
//! A [`Graph`] is a single-use tape: leaves are registered with
//! [`Graph::variable`] or [`Graph::constant`], every op appends a node, and
//! [`Graph::backward`] sweeps the tape once in reverse. Only the operations
//! the reconstruction network needs are provided.

mod graph;
mod kernels;
pub mod gradcheck;
pub mod optim;
pub mod params;

pub use graph::{frames, plane, BatchStats, Gradients, Graph, Tensor, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ShapeError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Mismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    Rank { op: &'static str, expected: usize, got: Vec<usize> },
    #[error("2x2 pooling needs even spatial dims, got {h}x{w}")]
    OddSpatial { h: usize, w: usize },
    #[error("{frames} frames cannot be split into windows of {steps} steps")]
    Steps { frames: usize, steps: usize },
}

pub type Result<T> = std::result::Result<T, ShapeError>;
