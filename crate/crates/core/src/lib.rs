//! Covariance-aware regularization for feedforward networks and linear models.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. It provides:
//!
//! - [`gram`]: the stabilized Gram matrix `C_δ = HᵀH/n + δI` with its spectral
//!   decomposition and symmetric square root.
//! - [`penalty`]: Ridge, Lasso, Elastic Net, Covridge and Sparridge penalties,
//!   their (sub)gradients and a two-dimensional contour evaluator.
//! - [`mlp`]: a ReLU network with linear or softmax head and a regularized
//!   SGD/Adam training loop.
//! - [`linear`]: closed-form Covridge, proximal Sparridge, shrunken targets,
//!   sandwich covariances and the Sparridge limit criterion.
//! - [`simulate`], [`tune`] and [`pipeline`]: synthetic data generation,
//!   cross-validated grid search and the end-to-end experiment protocols.
//!
//! Work that can run in parallel is expressed through the [`Executor`] trait;
//! [`Sequential`] is the built-in implementation and the companion `geomreg`
//! crate supplies a thread-pool backed one.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
mod error;
pub mod gram;
pub mod linalg;
pub mod linear;
pub mod mlp;
pub mod penalty;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod tune;

pub use error::{Error, Result};

use alloc::vec::Vec;

/// Runs `count` independent tasks and returns their results in index order.
///
/// Implementations may evaluate tasks concurrently, but the returned vector
/// must always be ordered by task index so that downstream reductions are
/// deterministic.
pub trait Executor: Sync {
    fn map<R, F>(&self, count: usize, task: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

/// Evaluates tasks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R, F>(&self, count: usize, task: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..count).map(task).collect()
    }
}
