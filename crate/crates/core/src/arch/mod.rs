//! The depth network: configuration, weights, forward pass and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod coordconv;
pub mod network;
pub mod params;

pub use config::{fusion_budget, ArchConfig, NUM_SCALES};
pub use network::{infer, Decoded, DisparitySet, FeaturePyramid, Forward, Network, REFINE_CHANNELS};
pub use params::{Param, ParamId, ParamStore};
