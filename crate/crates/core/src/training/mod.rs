//! Loss, synthetic tasks, the optimization loop, and evaluation.

mod data;
mod degrade;
mod filters;
mod loss;
mod metrics;
mod optim;
mod sampler;
mod scenes;
mod trainer;

pub use data::{Dataset, Task};
pub use degrade::{
    check_binary_mask, degrade, dilate, hole_mask, sparse_visible_mask, CleanSample, DegradationKind, DegradationSpec,
    Sample,
};
pub use filters::{oracle_filter, FilterSpec};
pub use loss::LossSpec;
pub use metrics::{mse, psnr, psnr_from_mse, PSNR_CAP};
pub use optim::{Optimizer, OptimizerKind, Schedule};
pub use sampler::{patch_sites, sample_patches, Batch, PatchSite};
pub use scenes::{generate_scene, luminance, Scene};
pub use trainer::{
    evaluate, evaluate_with, predict, train_loop, train_loop_with, train_step, CurvePoint, TrainConfig, TrainReport,
};
