//! Robustness of explanations to data augmentation, scored as the area under
//! the explanation-correlation curve relative to the area under the
//! normalised-probability curve.

pub mod augment;

use log::warn;
use serde::{Deserialize, Serialize};

pub use augment::{apply_augmentation, augment_map, AugmentationKind};

use crate::error::{Error, Result};
use crate::heatmap::PooledMap;
use crate::nn::Classifier;
use crate::tensor::Tensor;

pub const DEFAULT_GRID: usize = 11;
pub const DEFAULT_TARGET_DROP: f64 = 0.1;
const BISECTION_STEPS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub interval: (f64, f64),
    pub grid: usize,
}

impl AugmentationSpec {
    pub fn symmetric(kind: AugmentationKind, half_width: f64, grid: usize) -> Self {
        Self {
            kind,
            interval: kind.interval(half_width),
            grid,
        }
    }

    /// Equidistant grid over the interval; must contain the identity value.
    pub fn grid_values(&self) -> Result<Vec<f64>> {
        let (lo, hi) = self.interval;
        if self.grid < 2 || !(lo < hi) {
            return Err(Error::invalid("augmentation grid needs k ≥ 2 points over a non-empty interval"));
        }
        let k = self.grid;
        let mut v: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
        let id = self.kind.identity();
        let near = v
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - id).abs().total_cmp(&(b.1 - id).abs()))
            .map(|(i, _)| i)
            .expect("k ≥ 2");
        if (v[near] - id).abs() > 1e-9 * (hi - lo) {
            return Err(Error::invalid(format!("grid over [{lo}, {hi}] misses the identity {id}")));
        }
        v[near] = id;
        Ok(v)
    }
}

/// An image with its foreground and the class whose probability is tracked.
#[derive(Clone, Debug)]
pub struct Target<'a> {
    pub image: &'a Tensor,
    pub foreground: &'a [bool],
    pub class: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kind: AugmentationKind,
    pub half_width: f64,
    /// Mean probability drop at the worse of the two endpoints.
    pub endpoint_drop: f64,
    /// False when the target drop could not be reached inside the domain.
    pub reached: bool,
}

impl Calibration {
    pub fn spec(&self, grid: usize) -> AugmentationSpec {
        AugmentationSpec::symmetric(self.kind, self.half_width, grid)
    }
}

fn mean_drop(classifier: &dyn Classifier, items: &[Target], kind: AugmentationKind, half_width: f64) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for value in [kind.identity() - half_width, kind.identity() + half_width] {
        let mut total = 0.0;
        for t in items {
            let p0 = classifier.probabilities(t.image)?[t.class];
            let (img, _) = apply_augmentation(t.image, t.foreground, kind, value)?;
            total += p0 - classifier.probabilities(&img)?[t.class];
        }
        worst = worst.max(total / items.len() as f64);
    }
    Ok(worst)
}

/// Smallest symmetric half-width (found by bisection) at which the mean
/// target-probability drop reaches `target_drop`. Returns the domain bound
/// with a warning when the drop is out of reach.
pub fn calibrate_interval(
    classifier: &dyn Classifier,
    items: &[Target],
    kind: AugmentationKind,
    target_drop: f64,
) -> Result<Calibration> {
    if !(target_drop > 0.0 && target_drop < 1.0) {
        return Err(Error::invalid(format!("target drop must lie in (0, 1), got {target_drop}")));
    }
    if items.is_empty() {
        return Err(Error::invalid("calibration needs at least one image"));
    }
    let max = kind.max_half_width();
    let top = mean_drop(classifier, items, kind, max)?;
    if top < target_drop {
        warn!("{kind}: mean drop {top:.4} at the domain bound stays below {target_drop}; using the bound");
        return Ok(Calibration {
            kind,
            half_width: max,
            endpoint_drop: top,
            reached: false,
        });
    }
    let (mut lo, mut hi, mut hi_drop) = (0.0, max, top);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let d = mean_drop(classifier, items, kind, mid)?;
        if d >= target_drop {
            hi = mid;
            hi_drop = d;
        } else {
            lo = mid;
        }
    }
    Ok(Calibration {
        kind,
        half_width: hi,
        endpoint_drop: hi_drop,
        reached: true,
    })
}

/// Pearson correlation over pixels in both foregrounds; `None` when either
/// side has zero variance or fewer than two shared pixels.
pub fn pearson(a: &PooledMap, b: &PooledMap) -> Option<f64> {
    let idx: Vec<usize> = (0..a.values.len()).filter(|&p| a.foreground[p] && b.foreground[p]).collect();
    if idx.len() < 2 {
        return None;
    }
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&p| a.values[p]).sum::<f64>() / n;
    let mb = idx.iter().map(|&p| b.values[p]).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &p in &idx {
        let (x, y) = (a.values[p] - ma, b.values[p] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    (1..x.len()).map(|i| (x[i] - x[i - 1]) * (y[i] + y[i - 1]) / 2.0).sum()
}

/// Adds the constant that brings the curve maximum to exactly 1. Written
/// as `(v − max) + 1` so the maximum maps to 1.0 without rounding.
pub fn shift_to_one(y: &[f64]) -> Vec<f64> {
    let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    y.iter().map(|v| (v - m) + 1.0).collect()
}

/// Area under the shifted correlation curve over the area under the shifted
/// probability curve.
pub fn auc_ratio(grid: &[f64], correlation: &[f64], probability: &[f64]) -> Result<f64> {
    let num = trapezoid(grid, &shift_to_one(correlation));
    let den = trapezoid(grid, &shift_to_one(probability));
    if den <= 0.0 {
        return Err(Error::undefined("probability curve has no area"));
    }
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub grid: Vec<f64>,
    pub correlation: Vec<f64>,
    pub probability: Vec<f64>,
    pub score: f64,
}

/// Robustness of one image's explanation. `explain` maps an (augmented)
/// image and its foreground to a pooled heatmap.
pub fn robustness_score(
    classifier: &dyn Classifier,
    target: &Target,
    explain: impl Fn(&Tensor, &[bool]) -> Result<PooledMap>,
    spec: &AugmentationSpec,
) -> Result<RobustnessCurve> {
    let grid = spec.grid_values()?;
    let p0 = classifier.probabilities(target.image)?[target.class];
    if p0 <= 0.0 {
        return Err(Error::undefined("target probability of the original image is zero"));
    }
    let base = explain(target.image, target.foreground)?;
    let mut correlation = Vec::with_capacity(grid.len());
    let mut probability = Vec::with_capacity(grid.len());
    for &v in &grid {
        let (img, fg) = apply_augmentation(target.image, target.foreground, spec.kind, v)?;
        let (e, p) = if v == spec.kind.identity() {
            (base.clone(), p0)
        } else {
            (explain(&img, &fg)?, classifier.probabilities(&img)?[target.class])
        };
        let reference = augment_map(&base, spec.kind, v);
        let rho = pearson(&e, &reference).ok_or_else(|| Error::undefined("explanation has zero variance"))?;
        correlation.push(rho);
        probability.push((p / p0).min(1.0));
    }
    let score = auc_ratio(&grid, &correlation, &probability)?;
    Ok(RobustnessCurve {
        grid,
        correlation,
        probability,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_kernel_with, DefectKind, SynthParams};
    use crate::heatmap::Pooling;
    use crate::nn::FnClassifier;
    use rand::Rng;

    fn brightness_model() -> FnClassifier<impl Fn(&Tensor) -> Vec<f64> + Send + Sync> {
        FnClassifier::new(2, |x: &Tensor| {
            let d = x.data();
            let fg = crate::data::foreground_of(x);
            let n = fg.len();
            let cnt = fg.iter().filter(|f| **f).count().max(1) as f64;
            let m: f64 = (0..n).filter(|&p| fg[p]).map(|p| d[p] + d[n + p] + d[2 * n + p]).sum::<f64>() / (3.0 * cnt);
            let z = 8.0 * (m - 0.3);
            let p = 1.0 / (1.0 + (-z).exp());
            vec![p, 1.0 - p]
        })
    }

    fn kernel(seed: u64) -> crate::data::SyntheticKernel {
        let p = SynthParams { height: 24, width: 24, ..Default::default() };
        generate_kernel_with(seed, DefectKind::Discolor, 0.6, &p)
    }

    fn intensity_map(img: &Tensor, fg: &[bool]) -> PooledMap {
        let (_, h, w) = img.dims();
        let n = h * w;
        let d = img.data();
        let values = (0..n).map(|p| if fg[p] { (d[p] + d[n + p] + d[2 * n + p]) / 3.0 } else { 0.0 }).collect();
        PooledMap::new(h, w, values, Pooling::Mean, fg.to_vec()).unwrap()
    }

    #[test]
    fn grid_contains_identity() {
        let g = AugmentationSpec::symmetric(AugmentationKind::Scale, 0.2, 11).grid_values().unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[5], 1.0);
        assert!(AugmentationSpec { kind: AugmentationKind::Rotate, interval: (1.0, 10.0), grid: 4 }.grid_values().is_err());
    }

    #[test]
    fn equal_curves_give_one() {
        let g = [-1.0, 0.0, 1.0];
        assert_eq!(auc_ratio(&g, &[0.5, 1.0, 0.7], &[0.5, 1.0, 0.7]).unwrap(), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn shifted_max_is_exactly_one(y in proptest::collection::vec(-1.0f64..1.0, 1..40)) {
            let s = shift_to_one(&y);
            proptest::prop_assert_eq!(s.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }

    #[test]
    fn calibration_reaches_the_target_drop() {
        let clf = brightness_model();
        let ks: Vec<_> = (0..6).map(kernel).collect();
        let items: Vec<Target> = ks.iter().map(|k| Target { image: &k.image, foreground: &k.foreground, class: 0 }).collect();
        let cal = calibrate_interval(&clf, &items, AugmentationKind::Brightness, 0.1).unwrap();
        assert!(cal.reached);
        let direct = mean_drop(&clf, &items, AugmentationKind::Brightness, cal.half_width).unwrap();
        assert!((direct - 0.1).abs() < 0.01, "{direct}");
        assert!(calibrate_interval(&clf, &items, AugmentationKind::Brightness, 0.0).is_err());
    }

    #[test]
    fn constant_model_returns_domain_bound() {
        let clf = FnClassifier::new(2, |_: &Tensor| vec![0.6, 0.4]);
        let k = kernel(1);
        let items = [Target { image: &k.image, foreground: &k.foreground, class: 0 }];
        let cal = calibrate_interval(&clf, &items, AugmentationKind::Rotate, 0.1).unwrap();
        assert!(!cal.reached);
        assert_eq!(cal.half_width, 180.0);
    }

    #[test]
    fn invariant_and_equivariant_perfect_explainers_agree() {
        let clf = brightness_model();
        let k = kernel(2);
        let t = Target { image: &k.image, foreground: &k.foreground, class: 0 };
        // a fixed map scores the full interval length in the numerator
        let fixed = intensity_map(&k.image, &k.foreground);
        let spec = AugmentationSpec::symmetric(AugmentationKind::Brightness, 60.0, 11);
        let inv = robustness_score(&clf, &t, |_, _| Ok(fixed.clone()), &spec).unwrap();
        assert!(inv.correlation.iter().all(|r| (*r - 1.0).abs() < 1e-12));
        let den = trapezoid(&inv.grid, &shift_to_one(&inv.probability));
        assert!((inv.score - 120.0 / den).abs() < 1e-9);
        assert!(inv.score >= 1.0);
        // the intensity map moves with the image, so it is perfectly
        // equivariant under rotation
        let spec = AugmentationSpec::symmetric(AugmentationKind::Rotate, 30.0, 11);
        let eq = robustness_score(&clf, &t, |img, fg| Ok(intensity_map(img, fg)), &spec).unwrap();
        let den = trapezoid(&eq.grid, &shift_to_one(&eq.probability));
        for r in &eq.correlation {
            assert!(*r > 0.999, "{r}");
        }
        assert!((eq.score - 60.0 / den).abs() / eq.score < 1e-3);
    }

    #[test]
    fn affine_rescaled_explanations_score_the_same() {
        let clf = brightness_model();
        let k = kernel(4);
        let t = Target { image: &k.image, foreground: &k.foreground, class: 0 };
        let spec = AugmentationSpec::symmetric(AugmentationKind::Hue, 40.0, 7);
        let e = |img: &Tensor, fg: &[bool]| Ok(intensity_map(img, fg).map(|v| v * v));
        let a = robustness_score(&clf, &t, e, &spec).unwrap();
        let b = robustness_score(&clf, &t, |img, fg| Ok(e(img, fg)?.map(|v| 3.0 * v + 2.0)), &spec).unwrap();
        assert!((a.score - b.score).abs() < 1e-12);
    }

    #[test]
    fn constant_maps_beat_noise_for_invariant_kinds() {
        let clf = brightness_model();
        let spec = AugmentationSpec::symmetric(AugmentationKind::Saturation, 50.0, 5);
        let mut diffs = Vec::new();
        for s in 0..30 {
            let k = kernel(100 + s);
            let t = Target { image: &k.image, foreground: &k.foreground, class: 0 };
            let fixed = intensity_map(&k.image, &k.foreground);
            let c = robustness_score(&clf, &t, |_, _| Ok(fixed.clone()), &spec).unwrap().score;
            let noise = robustness_score(
                &clf,
                &t,
                |img, fg| {
                    let mut rng = crate::rng::stream_rng(img.data().iter().map(|v| v.to_bits()).fold(s, |a, b| a ^ b), 0);
                    let mut m = intensity_map(img, fg);
                    m.values.iter_mut().for_each(|v| *v = rng.random::<f64>());
                    Ok(m)
                },
                &spec,
            )
            .unwrap()
            .score;
            diffs.push(c - noise);
        }
        let (mean, sem) = crate::metrics::mean_sem(&diffs).unwrap();
        assert!(mean / sem > 2.46, "t = {}", mean / sem);
    }
}
