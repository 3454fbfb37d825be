//! Small sequential conv/dense networks with exact backward passes,
//! batch-norm folding and per-layer access for attribution methods.

pub mod canonize;
pub mod checkpoint;
pub(crate) mod kernels;
pub mod layer;
pub mod local;
pub mod model;
pub mod train;

pub use canonize::merge_batchnorm;
pub use layer::{BatchNorm, Conv2d, Dense, Layer, ReluMode};
pub use local::{LocalForward, Rect};
pub use model::{softmax, Classifier, FnClassifier, ForwardPass, Model};
pub use train::{accuracy, calibrate_batchnorm, train, Sample, TrainConfig, TrainReport};
