//! Run configuration, presets and configuration hashes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DefectKind, SynthParams};
use crate::error::{Error, Result};
use crate::explain::ExplainParams;
use crate::heatmap::{NormalizationSpec, Pooling};
use crate::method::MethodId;
use crate::metrics::MetricId;
use crate::nn::TrainConfig;
use crate::ranking::GroupAssignment;
use crate::robustness::AugmentationKind;
use crate::segment::QuickshiftParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Full,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(Error::invalid(format!("unknown preset `{s}` (expected desk or full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_items: usize,
    pub synth: SynthParams,
    pub severity_range: (f64, f64),
}

/// Training settings; the seed comes from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub cosine_schedule: bool,
    /// Training images used to set batch-norm statistics before training.
    pub bn_calibration_images: usize,
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            cosine_schedule: self.cosine_schedule,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    pub quickshift: QuickshiftParams,
    pub min_segments: usize,
    pub max_halvings: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    pub radius: f64,
    pub samples: usize,
    /// Evaluation images (taken from the front of the evaluation set).
    pub images: usize,
}

/// Augmentations a method is not scored on; shown as "-" in tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipRule {
    pub method: MethodId,
    pub augmentations: Vec<AugmentationKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub augmentations: Vec<AugmentationKind>,
    pub grid: usize,
    pub target_drop: f64,
    pub calibration_images: usize,
    pub images: usize,
    /// Pooling of the maps that are correlated.
    pub pooling: Pooling,
    pub skip: Vec<SkipRule>,
}

impl RobustnessConfig {
    pub fn skips(&self, method: MethodId, kind: AugmentationKind) -> bool {
        self.skip
            .iter()
            .any(|r| r.method == method && r.augmentations.contains(&kind))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Correctly classified test images evaluated, balanced over labels.
    pub images: usize,
    pub flip_fraction: f64,
    /// Adds the annotation mask as a reference row to the pixel-flipping
    /// table. It is not ranked.
    pub ground_truth_row: bool,
    pub sensitivity: SensitivityConfig,
    pub robustness: RobustnessConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingConfig {
    pub monte_carlo: usize,
    pub groups: GroupAssignment,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub images: usize,
    pub normalization: NormalizationSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub datasets: Vec<DefectKind>,
    pub data: DataConfig,
    pub train: TrainSettings,
    pub methods: Vec<MethodId>,
    pub poolings: Vec<Pooling>,
    pub metrics: Vec<MetricId>,
    pub explain: ExplainParams,
    pub segmentation: SegmentationConfig,
    pub evaluation: EvaluationConfig,
    pub ranking: RankingConfig,
    pub render: RenderConfig,
    /// Worker threads for `evaluate`; 0 uses every core. Not part of the
    /// configuration hash since results do not depend on it.
    #[serde(default)]
    pub workers: usize,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = RunConfig {
            seed: 0,
            datasets: vec![DefectKind::Discolor],
            data: DataConfig {
                n_items: 3334,
                synth: SynthParams::default(),
                severity_range: (0.3, 1.0),
            },
            train: TrainSettings {
                epochs: 6,
                batch_size: 32,
                learning_rate: 0.01,
                momentum: 0.9,
                weight_decay: 1e-4,
                cosine_schedule: true,
                bn_calibration_images: 200,
            },
            methods: MethodId::ALL.to_vec(),
            poolings: Pooling::ALL.to_vec(),
            metrics: MetricId::ALL.to_vec(),
            explain: ExplainParams::default(),
            segmentation: SegmentationConfig {
                quickshift: QuickshiftParams::default(),
                min_segments: 4,
                max_halvings: 6,
            },
            evaluation: EvaluationConfig {
                images: 400,
                flip_fraction: 0.2,
                ground_truth_row: true,
                sensitivity: SensitivityConfig {
                    radius: 0.05,
                    samples: 20,
                    images: 12,
                },
                robustness: RobustnessConfig {
                    augmentations: AugmentationKind::ALL.to_vec(),
                    grid: 11,
                    target_drop: 0.1,
                    calibration_images: 64,
                    images: 8,
                    pooling: Pooling::Mean,
                    skip: vec![SkipRule {
                        method: MethodId::Occlusion,
                        augmentations: vec![
                            AugmentationKind::Rotate,
                            AugmentationKind::Scale,
                            AugmentationKind::Translate,
                        ],
                    }],
                },
            },
            ranking: RankingConfig {
                monte_carlo: 100,
                groups: GroupAssignment::standard(),
            },
            render: RenderConfig {
                images: 4,
                normalization: NormalizationSpec::default(),
            },
            workers: 0,
        };
        match preset {
            Preset::Desk => desk,
            Preset::Full => {
                let mut c = desk;
                c.datasets = DefectKind::ALL.to_vec();
                c.data.n_items = 5000;
                c.train.epochs = 8;
                c.evaluation.images = 1000;
                c.evaluation.sensitivity.samples = 50;
                c.evaluation.sensitivity.images = 100;
                c.evaluation.robustness.calibration_images = 200;
                c.evaluation.robustness.images = 100;
                c.render.images = 16;
                c
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.datasets.is_empty() {
            return bad("no datasets selected".into());
        }
        if self.methods.is_empty() || self.poolings.is_empty() || self.metrics.is_empty() {
            return bad("methods, poolings and metrics must be non-empty".into());
        }
        for (name, dup) in [
            ("datasets", has_duplicates(&self.datasets)),
            ("methods", has_duplicates(&self.methods)),
            ("poolings", has_duplicates(&self.poolings)),
            ("metrics", has_duplicates(&self.metrics)),
        ] {
            if dup {
                return bad(format!("duplicate entries in {name}"));
            }
        }
        if self.methods.contains(&MethodId::MeanAggregate) && self.base_methods().len() < 2 {
            return bad("mean-aggregate needs at least two other methods".into());
        }
        if self.data.n_items < 10 {
            return bad("a dataset needs at least 10 items".into());
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return bad("training needs epochs, batch size and learning rate > 0".into());
        }
        self.explain.validate()?;
        let e = &self.evaluation;
        if e.images == 0 {
            return bad("evaluation needs at least one image".into());
        }
        if !(e.flip_fraction > 0.0 && e.flip_fraction <= 1.0) {
            return bad("flip fraction must lie in (0, 1]".into());
        }
        if e.sensitivity.samples == 0 || !(e.sensitivity.radius >= 0.0) {
            return bad("sensitivity needs samples > 0 and radius >= 0".into());
        }
        let r = &e.robustness;
        if r.grid < 3 || r.grid % 2 == 0 {
            return bad("robustness grid must be odd and at least 3".into());
        }
        if !(r.target_drop > 0.0 && r.target_drop < 1.0) {
            return bad("robustness target drop must lie in (0, 1)".into());
        }
        if self.metrics.contains(&MetricId::Robustness) && (r.augmentations.is_empty() || r.calibration_images == 0) {
            return bad("robustness needs augmentations and calibration images".into());
        }
        if self.ranking.monte_carlo < 2 {
            return bad("Monte-Carlo ranking needs at least two repetitions".into());
        }
        Ok(())
    }

    /// Methods that produce heatmaps themselves (everything except the
    /// aggregate).
    pub fn base_methods(&self) -> Vec<MethodId> {
        self.methods
            .iter()
            .copied()
            .filter(|m| *m != MethodId::MeanAggregate)
            .collect()
    }

    /// Hash of the canonical JSON form, without `workers`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("workers");
        }
        canonical_hash(&v)
    }
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
}

/// sha256 of a value's JSON text. `serde_json` maps keep their keys sorted,
/// so equal values always hash equally.
pub fn canonical_hash(value: &impl Serialize) -> String {
    let v = serde_json::to_value(value).expect("serialisable");
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}
