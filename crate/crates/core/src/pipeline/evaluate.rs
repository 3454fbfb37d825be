//! In-memory evaluation of one run: explanations, per-image metric values
//! and their summaries. The disk-facing stages call into this module.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SegmentationConfig};
use crate::data::AnnotationClass;
use crate::error::{Error, Result};
use crate::explain::{explain_masked, explain_surrogates_masked, ExplainParams, MethodSpec};
use crate::heatmap::{aggregate, pool_channels, Heatmap, PooledMap, Pooling};
use crate::method::MethodId;
use crate::metrics::{
    avg_sensitivity_multi, complexity, irof, pixel_flipping, relevance_mass_accuracy, roc_auc, summarize, MetricId,
    MetricScore,
};
use crate::nn::{Classifier, Model};
use crate::rng::derive_seed;
use crate::robustness::{calibrate_interval, robustness_score, AugmentationKind, Calibration, Target};
use crate::segment::{quickshift_with_floor, SegmentMap};
use crate::tensor::Tensor;

/// Subject name of the annotation-mask reference row.
pub const GROUND_TRUTH: &str = "ground-truth";

/// One correctly classified image prepared for evaluation.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub image: Tensor,
    pub foreground: Vec<bool>,
    pub annotation: Vec<AnnotationClass>,
    pub target: usize,
    pub segments: SegmentMap,
    pub seed: u64,
}

impl EvalItem {
    pub fn positive_mask(&self) -> Vec<bool> {
        self.annotation.iter().map(|a| *a == AnnotationClass::Positive).collect()
    }

    pub fn has_positive(&self) -> bool {
        self.annotation.contains(&AnnotationClass::Positive)
    }

    fn as_target(&self) -> Target<'_> {
        Target {
            image: &self.image,
            foreground: &self.foreground,
            class: self.target,
        }
    }
}

pub fn segment(config: &SegmentationConfig, image: &Tensor, foreground: &[bool]) -> Result<SegmentMap> {
    quickshift_with_floor(
        image,
        foreground,
        &config.quickshift,
        config.min_segments,
        config.max_halvings,
    )
}

/// Heatmaps of `methods` (none of them the aggregate), in order. LIME and
/// Kernel SHAP share one set of perturbations when both are requested.
#[allow(clippy::too_many_arguments)]
pub fn explain_methods(
    params: &ExplainParams,
    methods: &[MethodId],
    model: &Model,
    image: &Tensor,
    foreground: &[bool],
    target: usize,
    segments: Option<&SegmentMap>,
    seed: u64,
) -> Result<Vec<Heatmap>> {
    let both = methods.contains(&MethodId::Lime) && methods.contains(&MethodId::KernelShap);
    let mut shared = None;
    if both {
        let seg = segments.ok_or_else(|| Error::invalid("LIME and Kernel SHAP need a segment map"))?;
        shared = Some(explain_surrogates_masked(params, model, image, foreground, target, seg, seed)?);
    }
    methods
        .iter()
        .map(|&m| match (&shared, m) {
            (Some((lime, _)), MethodId::Lime) => Ok(lime.clone()),
            (Some((_, shap)), MethodId::KernelShap) => Ok(shap.clone()),
            _ => {
                let spec = MethodSpec { id: m, params: *params };
                explain_masked(&spec, model, image, foreground, target, segments, seed)
            }
        })
        .collect()
}

/// Pooled maps for every configured method (the aggregate included), in
/// configuration order; `heatmaps` follow [`RunConfig::base_methods`].
pub fn pooled_maps(config: &RunConfig, heatmaps: &[Heatmap], seed: u64) -> Result<Vec<(MethodId, Vec<PooledMap>)>> {
    let base = config.base_methods();
    if heatmaps.len() != base.len() {
        return Err(Error::invalid("one heatmap per base method expected"));
    }
    let pooled: Vec<Vec<PooledMap>> = heatmaps
        .iter()
        .map(|h| config.poolings.iter().map(|&p| pool_channels(h, p)).collect())
        .collect();
    let mut out = Vec::with_capacity(config.methods.len());
    for &m in &config.methods {
        if m == MethodId::MeanAggregate {
            let agg = (0..config.poolings.len())
                .map(|j| {
                    let maps: Vec<PooledMap> = pooled.iter().map(|row| row[j].clone()).collect();
                    aggregate(&maps, derive_seed(seed, j as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push((m, agg));
        } else {
            let i = base.iter().position(|b| *b == m).expect("base method");
            out.push((m, pooled[i].clone()));
        }
    }
    Ok(out)
}

/// One metric value of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageValue {
    pub item: String,
    pub metric: MetricId,
    /// Method id, or `ground-truth` for the annotation reference.
    pub subject: String,
    pub pooling: Option<Pooling>,
    pub augmentation: Option<AugmentationKind>,
    pub value: f64,
}

/// A metric that has no value for an image, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub item: String,
    pub metric: MetricId,
    pub subject: String,
    pub pooling: Option<Pooling>,
    pub augmentation: Option<AugmentationKind>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageOutcome {
    pub values: Vec<ImageValue>,
    pub skips: Vec<SkipRecord>,
}

impl ImageOutcome {
    fn record(
        &mut self,
        item: &str,
        metric: MetricId,
        subject: &str,
        pooling: Option<Pooling>,
        augmentation: Option<AugmentationKind>,
        value: Result<f64>,
    ) -> Result<()> {
        match value {
            Ok(value) => self.values.push(ImageValue {
                item: item.to_string(),
                metric,
                subject: subject.to_string(),
                pooling,
                augmentation,
                value,
            }),
            Err(Error::Undefined(reason)) => self.skips.push(SkipRecord {
                item: item.to_string(),
                metric,
                subject: subject.to_string(),
                pooling,
                augmentation,
                reason,
            }),
            Err(e) => return Err(e),
        }
        Ok(())
    }

    pub fn extend(&mut self, other: ImageOutcome) {
        self.values.extend(other.values);
        self.skips.extend(other.skips);
    }
}

/// Pixel-flipping, IROF, complexity, ROC-AUC and relevance mass accuracy
/// of every method and pooling on one image. Ground-truth metrics are only
/// defined for images with a positive annotation; relevance mass accuracy
/// only for sign-less poolings.
pub fn image_metrics(
    config: &RunConfig,
    classifier: &dyn Classifier,
    item: &EvalItem,
    pooled: &[(MethodId, Vec<PooledMap>)],
) -> Result<ImageOutcome> {
    let on = |m: MetricId| config.metrics.contains(&m);
    let fraction = config.evaluation.flip_fraction;
    let positive = item.positive_mask();
    let mut out = ImageOutcome::default();
    for (method, maps) in pooled {
        let subject = method.id();
        for (map, &pooling) in maps.iter().zip(&config.poolings) {
            let p = Some(pooling);
            let seed = item.seed;
            if on(MetricId::PixelFlipping) {
                let v = pixel_flipping(classifier, &item.image, map, item.target, fraction, seed);
                out.record(&item.id, MetricId::PixelFlipping, subject, p, None, v)?;
            }
            if on(MetricId::Irof) {
                let v = irof(classifier, &item.image, map, &item.segments, item.target, seed);
                out.record(&item.id, MetricId::Irof, subject, p, None, v)?;
            }
            if on(MetricId::Complexity) {
                out.record(&item.id, MetricId::Complexity, subject, p, None, complexity(map))?;
            }
            if item.has_positive() {
                if on(MetricId::RocAuc) {
                    let v = roc_auc(map, &item.annotation);
                    out.record(&item.id, MetricId::RocAuc, subject, p, None, v)?;
                }
                if on(MetricId::RelevanceMassAccuracy) && !pooling.is_signed() {
                    let v = relevance_mass_accuracy(map, &positive);
                    out.record(&item.id, MetricId::RelevanceMassAccuracy, subject, p, None, v)?;
                }
            }
        }
    }
    if config.evaluation.ground_truth_row && on(MetricId::PixelFlipping) && item.has_positive() {
        let (_, h, w) = item.image.dims();
        let values = positive.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let map = PooledMap::new(h, w, values, Pooling::Max, item.foreground.clone())?;
        let v = pixel_flipping(classifier, &item.image, &map, item.target, fraction, item.seed);
        out.record(&item.id, MetricId::PixelFlipping, GROUND_TRUTH, None, None, v)?;
    }
    Ok(out)
}

/// Average sensitivity of every base method under every pooling, all from
/// one set of perturbations. The perturbed images keep the item's
/// foreground and segment map.
pub fn sensitivity_metrics(config: &RunConfig, model: &Model, item: &EvalItem) -> Result<ImageOutcome> {
    let base = config.base_methods();
    let s = &config.evaluation.sensitivity;
    let explain = |x: &Tensor| -> Result<Vec<Vec<f64>>> {
        let maps = explain_methods(
            &config.explain,
            &base,
            model,
            x,
            &item.foreground,
            item.target,
            Some(&item.segments),
            item.seed,
        )?;
        Ok(maps
            .iter()
            .flat_map(|h| config.poolings.iter().map(move |&p| pool_channels(h, p).values))
            .collect())
    };
    let scores = avg_sensitivity_multi(&item.image, &item.foreground, explain, s.radius, s.samples, item.seed)?;
    let mut out = ImageOutcome::default();
    let mut k = 0;
    for m in &base {
        for &p in &config.poolings {
            let v = scores[k].ok_or_else(|| Error::undefined("explanation of the unperturbed image is zero"));
            out.record(&item.id, MetricId::Sensitivity, m.id(), Some(p), None, v)?;
            k += 1;
        }
    }
    Ok(out)
}

/// Interval calibration for every configured augmentation on the first
/// `calibration_images` items.
pub fn calibrate(config: &RunConfig, classifier: &dyn Classifier, items: &[EvalItem]) -> Result<Vec<Calibration>> {
    let r = &config.evaluation.robustness;
    let n = r.calibration_images.min(items.len());
    let targets: Vec<Target> = items[..n].iter().map(EvalItem::as_target).collect();
    r.augmentations
        .iter()
        .map(|&kind| calibrate_interval(classifier, &targets, kind, r.target_drop))
        .collect()
}

/// Robustness of every base method (minus configured skips) under every
/// calibrated augmentation.
pub fn robustness_metrics(
    config: &RunConfig,
    model: &Model,
    item: &EvalItem,
    calibrations: &[Calibration],
) -> Result<ImageOutcome> {
    let r = &config.evaluation.robustness;
    let mut out = ImageOutcome::default();
    for m in config.base_methods() {
        for cal in calibrations {
            if r.skips(m, cal.kind) {
                continue;
            }
            let explain = |img: &Tensor, fg: &[bool]| -> Result<PooledMap> {
                let seg = if m.needs_segments() {
                    Some(segment(&config.segmentation, img, fg)?)
                } else {
                    None
                };
                let h = explain_methods(&config.explain, &[m], model, img, fg, item.target, seg.as_ref(), item.seed)?;
                Ok(pool_channels(&h[0], r.pooling))
            };
            let v = robustness_score(model, &item.as_target(), explain, &cal.spec(r.grid)).map(|c| c.score);
            out.record(&item.id, MetricId::Robustness, m.id(), None, Some(cal.kind), v)?;
        }
    }
    Ok(out)
}

/// Mean and standard error of a reference subject (not a ranked method).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScore {
    pub subject: String,
    pub metric: MetricId,
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

/// Summaries of per-image values in configuration order: metric, then
/// method, then pooling or augmentation.
pub fn summarize_values(config: &RunConfig, values: &[ImageValue]) -> (Vec<MetricScore>, Vec<ReferenceScore>) {
    let augs = &config.evaluation.robustness.augmentations;
    let mut groups: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    let mut refs: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for v in values {
        let Some(mi) = config.metrics.iter().position(|m| *m == v.metric) else {
            continue;
        };
        match v.subject.parse::<MethodId>() {
            Ok(method) => {
                let Some(si) = config.methods.iter().position(|m| *m == method) else {
                    continue;
                };
                let ci = match (v.pooling, v.augmentation) {
                    (Some(p), _) => config.poolings.iter().position(|q| *q == p),
                    (None, Some(a)) => augs.iter().position(|b| *b == a),
                    (None, None) => Some(0),
                };
                if let Some(ci) = ci {
                    groups.entry((mi, si, ci)).or_default().push(v.value);
                }
            }
            Err(_) => refs.entry((mi, v.subject.clone())).or_default().push(v.value),
        }
    }
    let scores = groups
        .into_iter()
        .filter_map(|((mi, si, ci), vals)| {
            let metric = config.metrics[mi];
            let (pooling, aug) = if metric == MetricId::Robustness {
                (None, Some(augs[ci]))
            } else {
                (Some(config.poolings[ci]), None)
            };
            summarize(metric, config.methods[si], pooling, aug, &vals)
        })
        .collect();
    let references = refs
        .into_iter()
        .filter_map(|((mi, subject), vals)| {
            let (mean, sem) = crate::metrics::mean_sem(&vals)?;
            Some(ReferenceScore {
                subject,
                metric: config.metrics[mi],
                mean,
                sem,
                n: vals.len(),
            })
        })
        .collect();
    (scores, references)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_kernel_with, DefectKind, SynthParams};
    use crate::nn::merge_batchnorm;
    use crate::pipeline::config::Preset;

    fn small_config() -> RunConfig {
        let mut c = RunConfig::preset(Preset::Desk);
        c.explain.samples = 40;
        c.explain.ig_steps = 4;
        c.evaluation.sensitivity.samples = 2;
        c.evaluation.robustness.grid = 3;
        c.evaluation.robustness.augmentations = vec![AugmentationKind::Brightness, AugmentationKind::Rotate];
        c
    }

    fn item(seed: u64, config: &RunConfig) -> EvalItem {
        let p = SynthParams { height: 24, width: 24, ..Default::default() };
        let k = generate_kernel_with(seed, DefectKind::Discolor, 0.9, &p);
        let segments = segment(&config.segmentation, &k.image, &k.foreground).unwrap();
        EvalItem {
            id: format!("{seed:05}"),
            target: 1,
            segments,
            seed,
            image: k.image,
            foreground: k.foreground,
            annotation: k.annotation,
        }
    }

    #[test]
    fn shared_surrogates_match_separate_calls() {
        let config = small_config();
        let model = merge_batchnorm(&Model::micro_cnn(24, 24, 2, 3)).unwrap();
        let it = item(5, &config);
        let args = (&it.image, &it.foreground, it.target, Some(&it.segments), it.seed);
        let both = explain_methods(&config.explain, &[MethodId::KernelShap, MethodId::Lime], &model, args.0, args.1, args.2, args.3, args.4).unwrap();
        let lime = explain_methods(&config.explain, &[MethodId::Lime], &model, args.0, args.1, args.2, args.3, args.4).unwrap();
        assert_eq!(both[1].values, lime[0].values);
        assert_eq!(both[0].method, MethodId::KernelShap);
    }

    #[test]
    fn one_image_end_to_end() {
        let config = small_config();
        let model = merge_batchnorm(&Model::micro_cnn(24, 24, 2, 3)).unwrap();
        let it = item(7, &config);
        let base = config.base_methods();
        let maps = explain_methods(&config.explain, &base, &model, &it.image, &it.foreground, 1, Some(&it.segments), 1).unwrap();
        let pooled = pooled_maps(&config, &maps, 1).unwrap();
        assert_eq!(pooled.len(), 13);
        assert_eq!(pooled.last().unwrap().0, MethodId::MeanAggregate);

        let mut out = image_metrics(&config, &model, &it, &pooled).unwrap();
        out.extend(sensitivity_metrics(&config, &model, &it).unwrap());
        let cal = calibrate(&config, &model, std::slice::from_ref(&it)).unwrap();
        out.extend(robustness_metrics(&config, &model, &it, &cal).unwrap());

        let count = |m: MetricId| out.values.iter().filter(|v| v.metric == m).count()
            + out.skips.iter().filter(|v| v.metric == m).count();
        assert_eq!(count(MetricId::PixelFlipping), 13 * 4 + 1);
        assert_eq!(count(MetricId::RelevanceMassAccuracy), 13 * 2);
        assert_eq!(count(MetricId::Sensitivity), 12 * 4);
        // occlusion skips rotate
        assert_eq!(count(MetricId::Robustness), 12 * 2 - 1);
        for v in &out.values {
            assert!(v.value.is_finite(), "{v:?}");
        }

        let (scores, refs) = summarize_values(&config, &out.values);
        assert_eq!(refs.len(), 1);
        assert_eq!(refs[0].subject, GROUND_TRUTH);
        assert!(scores.iter().all(|s| s.n == 1 && s.sem == 0.0));
        let first = &scores[0];
        assert_eq!((first.metric, first.method), (config.metrics[0], config.methods[0]));
    }
}
