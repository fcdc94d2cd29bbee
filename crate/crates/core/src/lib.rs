//! Wildfire detection on multispectral satellite patches.
//!
//! The crate bundles everything needed to run the experiments end to end on
//! a CPU:
//!
//! - [`raster`]: the `FPC1` patch container, band selection, cirrus filtering
//!   and per-band standardization.
//! - [`autonet`]: a small NHWC tensor engine with hand-written forward and
//!   backward passes, a layer graph, checkpoints and finite-difference checks.
//! - [`models`]: the encoder/decoder fire-mask network and the image-level
//!   classifier used for the band sensitivity comparison.
//! - [`train`]: class-weighted cross-entropy, Adam, learning-rate schedule,
//!   seeded splitting and the training loop.
//! - [`metrics`]: confusion counts and the derived scores.
//! - [`cirrus`]: K-Means segmentation of the cirrus band.
//! - [`stats`]: proportion and mean-difference hypothesis tests.
//! - [`synthetic`]: seeded synthetic patches for desk-scale runs.

pub mod autonet;
pub mod cirrus;
pub mod config;
mod error;
pub mod metrics;
pub mod models;
pub mod raster;
pub mod stats;
pub mod synthetic;
pub mod train;

pub use autonet::{Mode, ModelGraph, Tensor};
pub use cirrus::{CirrusClass, SegmentedCirrus};
pub use error::{Error, Result};
pub use metrics::{ConfusionCounts, MetricsReport};
pub use models::{CnnConfig, FcnConfig, Head};
pub use raster::{MultibandPatch, NormalizationStats, PatchDataset, PixelData};
pub use stats::{Alternative, HypothesisResult};
pub use train::{TrainConfig, TrainLog};
