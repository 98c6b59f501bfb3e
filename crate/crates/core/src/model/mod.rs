//! The ViT feature extractor over cubic 3D patches and the 13 regression
//! heads.

mod checkpoint;
mod config;
mod ops;
mod params;
mod patch;
pub(crate) mod vit;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use params::{init_params, Gradients, HeadIndex, Layout, ModelParams, Tensor};
pub use patch::{patchify, unpatchify, Tokens};
pub use vit::{
    backward_sample, compose_global, forward, forward_sample, shared_representation, ForwardCache,
    Prediction,
};
