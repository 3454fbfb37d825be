//! Quality metrics for heatmaps and their per-method summaries.

pub mod flipping;
pub mod localization;
pub mod sensitivity;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use flipping::{irof, pixel_flipping, FlipCurve};
pub use localization::{relevance_mass_accuracy, roc_auc};
pub use sensitivity::{avg_sensitivity, avg_sensitivity_multi};

use crate::error::{Error, Result};
use crate::heatmap::{PooledMap, Pooling};
use crate::method::MethodId;
use crate::robustness::AugmentationKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricId {
    Robustness,
    Sensitivity,
    Complexity,
    PixelFlipping,
    Irof,
    RocAuc,
    RelevanceMassAccuracy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl MetricId {
    pub const ALL: [MetricId; 7] = [
        MetricId::Robustness,
        MetricId::Sensitivity,
        MetricId::Complexity,
        MetricId::PixelFlipping,
        MetricId::Irof,
        MetricId::RocAuc,
        MetricId::RelevanceMassAccuracy,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MetricId::Robustness => "robustness",
            MetricId::Sensitivity => "sensitivity",
            MetricId::Complexity => "complexity",
            MetricId::PixelFlipping => "pixel-flipping",
            MetricId::Irof => "irof",
            MetricId::RocAuc => "roc-auc",
            MetricId::RelevanceMassAccuracy => "relevance-mass-accuracy",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            MetricId::Robustness => "Robustness",
            MetricId::Sensitivity => "Average sensitivity",
            MetricId::Complexity => "Complexity",
            MetricId::PixelFlipping => "Pixel-flipping",
            MetricId::Irof => "IROF",
            MetricId::RocAuc => "ROC-AUC",
            MetricId::RelevanceMassAccuracy => "Relevance mass accuracy",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            MetricId::Sensitivity | MetricId::Complexity => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric `{s}`")))
    }
}

/// Mean and standard error of one metric for one method (and one pooling
/// or augmentation) over the evaluated images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: MetricId,
    pub method: MethodId,
    pub pooling: Option<Pooling>,
    pub augmentation: Option<AugmentationKind>,
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
    pub direction: Direction,
}

impl MetricScore {
    /// Name of the table column this score belongs to, e.g.
    /// `pixel-flipping/max-abs` or `robustness/rotate`.
    pub fn column(&self) -> String {
        match (self.pooling, self.augmentation) {
            (Some(p), _) => format!("{}/{}", self.metric, p),
            (None, Some(a)) => format!("{}/{}", self.metric, a),
            (None, None) => self.metric.to_string(),
        }
    }
}

/// Mean and standard error (sample standard deviation over √n); `None` for
/// an empty sample. A single value has standard error 0.
pub fn mean_sem(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn summarize(
    metric: MetricId,
    method: MethodId,
    pooling: Option<Pooling>,
    augmentation: Option<AugmentationKind>,
    values: &[f64],
) -> Option<MetricScore> {
    let (mean, sem) = mean_sem(values)?;
    Some(MetricScore {
        metric,
        method,
        pooling,
        augmentation,
        mean,
        sem,
        n: values.len(),
        direction: metric.direction(),
    })
}

/// Entropy of the normalised absolute attributions over the foreground.
pub fn complexity(map: &PooledMap) -> Result<f64> {
    let abs: Vec<f64> = map.foreground_values().iter().map(|v| v.abs()).collect();
    let total: f64 = abs.iter().sum();
    if total <= 0.0 {
        return Err(Error::undefined("attribution is zero everywhere"));
    }
    Ok(-abs
        .iter()
        .filter(|a| **a > 0.0)
        .map(|a| {
            let p = a / total;
            p * p.ln()
        })
        .sum::<f64>())
}
