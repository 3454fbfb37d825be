//! Attribution heatmaps for image classifiers, their quality metrics, and a
//! robust ranking of attribution methods by mean reciprocal rank.

pub mod data;
pub mod error;
pub mod explain;
pub mod heatmap;
pub mod method;
pub mod metrics;
pub mod nn;
pub mod order;
pub mod pipeline;
pub mod ranking;
pub mod rng;
pub mod robustness;
pub mod segment;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
