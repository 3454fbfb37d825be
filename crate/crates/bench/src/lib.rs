//! Fixtures shared by the benchmarks.

use heatrank::data::{generate_kernel, DefectKind, SyntheticKernel};
use heatrank::heatmap::Pooling;
use heatrank::method::MethodId;
use heatrank::metrics::{MetricId, MetricScore};
use heatrank::nn::{merge_batchnorm, Model};

pub fn image() -> SyntheticKernel {
    generate_kernel(7, DefectKind::Discolor, 0.8)
}

/// An untrained, canonized 64×64 micro-CNN; its cost does not depend on the
/// weights.
pub fn model() -> Model {
    merge_batchnorm(&Model::micro_cnn(64, 64, 2, 3)).expect("micro-CNN canonizes")
}

/// A full score table: every method, metric and pooling with made-up means
/// and overlapping uncertainties.
pub fn scores() -> Vec<MetricScore> {
    let mut out = Vec::new();
    for (i, &method) in MethodId::ALL.iter().enumerate() {
        for metric in [
            MetricId::PixelFlipping,
            MetricId::Irof,
            MetricId::Sensitivity,
            MetricId::Complexity,
            MetricId::RocAuc,
        ] {
            for pooling in Pooling::ALL {
                out.push(MetricScore {
                    metric,
                    method,
                    pooling: Some(pooling),
                    augmentation: None,
                    mean: ((i * 7 + pooling as usize * 3) % 13) as f64 / 13.0,
                    sem: 0.05,
                    n: 100,
                    direction: metric.direction(),
                });
            }
        }
    }
    out
}
