//! Balanced 60:20:20 datasets of synthetic kernels on disk.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{read_json, read_png, read_sidecar, to_rgb8, write_json, write_png, write_sidecar, Precision};
use super::synth::{foreground_of, generate_kernel_with, AnnotationClass, DefectKind, Label, SynthParams, SyntheticKernel};
use crate::error::{Error, Result};
use crate::nn::Sample;
use crate::rng::{derive_seed, stream_rng, tag};

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_items: usize,
    pub seed: u64,
    pub kind: DefectKind,
    pub synth: SynthParams,
    /// Severity of defect items is drawn uniformly from this range.
    pub severity_range: (f64, f64),
}

impl DatasetConfig {
    pub fn new(n_items: usize, seed: u64, kind: DefectKind) -> Self {
        Self {
            n_items,
            seed,
            kind,
            synth: SynthParams::default(),
            severity_range: (0.3, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    /// 60:20:20 with validation and test sizes rounded and the remainder in
    /// the training split.
    pub fn for_total(n: usize) -> Self {
        let val = (0.2 * n as f64).round() as usize;
        let test = (0.2 * n as f64).round() as usize;
        Self {
            train: n - val - test,
            val,
            test,
        }
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// `(healthy, defect)` counts of a split of size `s`; the defect class gets
/// the odd item.
pub fn class_counts(s: usize) -> (usize, usize) {
    (s / 2, s.div_ceil(2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub split: Split,
    pub label: Label,
    pub seed: u64,
    pub severity: f64,
    pub image_png: String,
    pub sidecar: String,
    pub mask_png: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub config: DatasetConfig,
    pub split_sizes: SplitSizes,
    pub items: Vec<ItemRecord>,
}

impl DatasetManifest {
    pub fn items_in(&self, split: Split) -> impl Iterator<Item = &ItemRecord> {
        self.items.iter().filter(move |r| r.split == split)
    }
}

#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub record: ItemRecord,
    pub kernel: SyntheticKernel,
}

impl DatasetItem {
    pub fn sample(&self) -> Sample {
        Sample {
            image: self.kernel.image.clone(),
            label: self.kernel.label.index(),
        }
    }
}

/// The manifest a build with `config` produces, without touching disk.
pub fn plan_dataset(config: &DatasetConfig) -> Result<DatasetManifest> {
    if config.n_items < 2 {
        return Err(Error::invalid("a dataset needs at least two items"));
    }
    let (lo, hi) = config.severity_range;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid(format!("severity range ({lo}, {hi}) must lie in (0, 1]")));
    }
    let sizes = SplitSizes::for_total(config.n_items);
    let mut slots = Vec::with_capacity(config.n_items);
    for split in Split::ALL {
        let (healthy, defect) = class_counts(sizes.get(split));
        slots.extend(std::iter::repeat_n((split, Label::Defect), defect));
        slots.extend(std::iter::repeat_n((split, Label::Healthy), healthy));
    }
    slots.shuffle(&mut stream_rng(config.seed, tag::SPLIT));
    let items = slots
        .into_iter()
        .enumerate()
        .map(|(i, (split, label))| {
            let seed = derive_seed(config.seed, tag::SYNTH + i as u64);
            let severity = match label {
                Label::Healthy => 0.0,
                Label::Defect => stream_rng(seed, 0).random_range(lo..=hi),
            };
            let id = format!("{i:05}");
            let dir = split.name();
            ItemRecord {
                image_png: format!("{dir}/{id}.png"),
                sidecar: format!("{dir}/{id}.f32"),
                mask_png: format!("{dir}/{id}.mask.png"),
                id,
                split,
                label,
                seed,
                severity,
            }
        })
        .collect();
    Ok(DatasetManifest {
        schema_version: MANIFEST_SCHEMA,
        config: config.clone(),
        split_sizes: sizes,
        items,
    })
}

pub fn generate_item(config: &DatasetConfig, record: &ItemRecord) -> SyntheticKernel {
    generate_kernel_with(record.seed, config.kind, record.severity, &config.synth)
}

/// Generates every item, writes `<root>/{train,val,test}/<id>.{png,f32,mask.png}`
/// and `<root>/manifest.json`.
pub fn build_dataset(root: &Path, config: &DatasetConfig) -> Result<DatasetManifest> {
    let manifest = plan_dataset(config)?;
    for split in Split::ALL {
        let dir = root.join(split.name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    manifest.items.par_iter().try_for_each(|record| -> Result<()> {
        let kernel = generate_item(config, record);
        if kernel.label != record.label {
            return Err(Error::invalid(format!(
                "item {} generated as {:?}, planned {:?}",
                record.id, kernel.label, record.label
            )));
        }
        let (_, h, w) = kernel.image.dims();
        write_sidecar(&root.join(&record.sidecar), &kernel.image, Precision::F32)?;
        write_png(&root.join(&record.image_png), w, h, 3, &to_rgb8(&kernel.image), &[])?;
        let mask: Vec<u8> = kernel.annotation.iter().map(|a| a.to_byte()).collect();
        write_png(&root.join(&record.mask_png), w, h, 1, &mask, &[])?;
        Ok(())
    })?;
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.schema_version != MANIFEST_SCHEMA {
        return Err(Error::corrupt(
            &path,
            format!("unsupported manifest schema {}", manifest.schema_version),
        ));
    }
    Ok(manifest)
}

pub fn load_item(root: &Path, record: &ItemRecord) -> Result<DatasetItem> {
    let image = read_sidecar(&root.join(&record.sidecar))?;
    let (c, h, w) = image.dims();
    let sidecar_path = root.join(&record.sidecar);
    if c != 3 {
        return Err(Error::corrupt(sidecar_path, format!("expected 3 channels, found {c}")));
    }
    let mask_path: PathBuf = root.join(&record.mask_png);
    let mask = read_png(&mask_path)?;
    if mask.channels != 1 || mask.width != w || mask.height != h {
        return Err(Error::corrupt(&mask_path, "mask does not match the image size"));
    }
    let annotation = mask
        .pixels
        .iter()
        .map(|&b| AnnotationClass::from_byte(b).ok_or_else(|| Error::corrupt(&mask_path, format!("mask value {b}"))))
        .collect::<Result<Vec<_>>>()?;
    let has_positive = annotation.contains(&AnnotationClass::Positive);
    if has_positive != (record.label == Label::Defect) {
        return Err(Error::corrupt(&mask_path, "annotation disagrees with the item label"));
    }
    Ok(DatasetItem {
        record: record.clone(),
        kernel: SyntheticKernel {
            foreground: foreground_of(&image),
            image,
            label: record.label,
            annotation,
        },
    })
}

/// Loads the items of `split` (all splits when `None`) in manifest order.
pub fn load_dataset(root: &Path, manifest: &DatasetManifest, split: Option<Split>) -> Result<Vec<DatasetItem>> {
    manifest
        .items
        .par_iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|r| load_item(root, r))
        .collect()
}
