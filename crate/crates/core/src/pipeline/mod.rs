//! End-to-end runs: configuration, on-disk layout, stage manifests, the
//! evaluation loop and report writers.

pub mod config;
pub mod evaluate;
pub mod manifest;
pub mod report;
pub mod stages;

pub use config::{Preset, RunConfig};
pub use manifest::{Layout, Stage, StageManifest};
pub use stages::Run;
