//! Synthetic grain-kernel data: generation, on-disk datasets and file formats.

pub mod dataset;
pub mod io;
pub mod synth;

pub use dataset::{
    build_dataset, load_dataset, load_manifest, plan_dataset, DatasetConfig, DatasetItem, DatasetManifest,
    ItemRecord, Split, SplitSizes,
};
pub use synth::{foreground_of, generate_kernel, generate_kernel_with, AnnotationClass, DefectKind, Label, SynthParams, SyntheticKernel};
