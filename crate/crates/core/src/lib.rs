//! Weighted multi-task regression of the 13 ADAS-Cog item scores from 3D
//! brain volumes.
//!
//! A small Vision Transformer trunk tokenizes each volume into cubic patches
//! and produces one shared representation; 13 task heads regress the item
//! scores, and the global score is always their sum. Training minimizes a
//! per-task weighted MSE with Adam.
//!
//! - [`data`]: volumes, score manifests, normalization, splits, synthetic cohorts
//! - [`model`]: ViT trunk, regression heads, checkpoints
//! - [`loss`]: weighted MSE, weight presets, correlation-derived weights
//! - [`train`]: gradients, Adam, the training loop, gradient checking
//! - [`eval`]: metrics, reports, the weighting ablation
//! - [`cli`]: the `subscore-mtl` command line

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod real;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;

/// Number of ADAS-Cog-13 items, and therefore of regression heads.
pub const N_TASKS: usize = 13;
