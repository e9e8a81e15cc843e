//! Network construction: the pyramid, its baselines, and evaluation.

mod build;
mod config;
mod graph;

pub use build::{build_cnp, build_simple_multiscale, build_single_level, rebuild, simple_multiscale_with_width};
pub use config::{CnpConfig, DownsampleMode};
pub use graph::{
    Architecture, ForwardOptions, Layer, LayerId, LayerKind, ModelGraph, ModelKind, ParamInit, ParamSpec, PoolKind,
};
