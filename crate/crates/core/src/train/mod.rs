//! Gradients of the weighted loss, Adam, the training loop and finite
//! difference gradient checks.

mod adam;
mod gradcheck;
mod trainer;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gradcheck::{check_gradients, gradcheck, GradCheckReport, GRADCHECK_TOLERANCE};
pub use trainer::{
    compute_gradients, dataset_loss, train, train_with, EpochRecord, TrainConfig, TrainHistory,
};
