//! Faithfulness by deletion: pixel flipping and IROF.

use crate::error::{Error, Result};
use crate::explain::occlusion::foreground_mean;
use crate::heatmap::PooledMap;
use crate::nn::Classifier;
use crate::order::{descending, tie_keys};
use crate::segment::SegmentMap;
use crate::tensor::Tensor;

/// Normalised target probability against the share of input removed.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FlipCurve {
    /// `∫₀^upto (1 − y) dx` by the trapezoid rule with linear interpolation
    /// at `upto`.
    pub fn area_over(&self, upto: f64) -> f64 {
        let mut area = 0.0;
        for i in 1..self.x.len() {
            let (x0, x1) = (self.x[i - 1], self.x[i]);
            if x0 >= upto {
                break;
            }
            let (y0, mut y1) = (self.y[i - 1], self.y[i]);
            let mut hi = x1;
            if x1 > upto {
                y1 = y0 + (y1 - y0) * (upto - x0) / (x1 - x0);
                hi = upto;
            }
            area += (hi - x0) * (2.0 - y0 - y1) / 2.0;
        }
        area
    }
}

pub const DEFAULT_FRACTION: f64 = 0.2;
pub const BATCH_SHARE: f64 = 0.01;

fn base_probability(classifier: &dyn Classifier, image: &Tensor, target: usize) -> Result<f64> {
    let p0 = classifier.probabilities(image)?[target];
    if p0 <= 0.0 {
        return Err(Error::undefined("target probability of the original image is zero"));
    }
    Ok(p0)
}

fn replace(img: &mut Tensor, pixels: &[usize], fill: &[f64]) {
    let (_, h, w) = img.dims();
    let n = h * w;
    let d = img.data_mut();
    for &p in pixels {
        for (ch, f) in fill.iter().enumerate() {
            d[ch * n + p] = *f;
        }
    }
}

/// Flips foreground pixels most-relevant first in batches of 1% of the
/// foreground until `fraction` is covered.
pub fn pixel_flipping_curve(
    classifier: &dyn Classifier,
    image: &Tensor,
    map: &PooledMap,
    target: usize,
    fraction: f64,
    seed: u64,
) -> Result<FlipCurve> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("flip fraction must lie in (0, 1]"));
    }
    let idx = map.foreground_indices();
    let n = idx.len();
    if n == 0 {
        return Err(Error::undefined("no foreground pixels"));
    }
    let p0 = base_probability(classifier, image, target)?;
    let vals: Vec<f64> = idx.iter().map(|&p| map.values[p]).collect();
    let order: Vec<usize> = descending(&vals, &tie_keys(n, seed)).into_iter().map(|k| idx[k]).collect();
    let fill = foreground_mean(image, &map.foreground);
    let batch = ((BATCH_SHARE * n as f64).round() as usize).max(1);
    let mut img = image.clone();
    let mut curve = FlipCurve { x: vec![0.0], y: vec![1.0] };
    let mut done = 0;
    while done < n && (done as f64) < fraction * n as f64 {
        let next = (done + batch).min(n);
        replace(&mut img, &order[done..next], &fill);
        done = next;
        let p = classifier.probabilities(&img)?[target];
        curve.x.push(done as f64 / n as f64);
        curve.y.push((p / p0).clamp(0.0, 1.0));
    }
    Ok(curve)
}

/// Normalised area over the flipping curve on `[0, fraction]`, in [0, 1].
pub fn pixel_flipping(
    classifier: &dyn Classifier,
    image: &Tensor,
    map: &PooledMap,
    target: usize,
    fraction: f64,
    seed: u64,
) -> Result<f64> {
    let curve = pixel_flipping_curve(classifier, image, map, target, fraction, seed)?;
    Ok(curve.area_over(fraction) / fraction)
}

/// Mean pooled attribution of each foreground segment (index `id − 1`).
pub fn segment_means(map: &PooledMap, segments: &SegmentMap) -> Vec<f64> {
    let m = segments.foreground_segments();
    let mut sum = vec![0.0; m];
    let mut cnt = vec![0usize; m];
    for (p, &l) in segments.labels.iter().enumerate() {
        if l > 0 {
            sum[l as usize - 1] += map.values[p];
            cnt[l as usize - 1] += 1;
        }
    }
    sum.iter().zip(&cnt).map(|(s, c)| s / (*c).max(1) as f64).collect()
}

/// Removes whole segments, most relevant first; x is the share of segments
/// removed.
pub fn irof_curve(
    classifier: &dyn Classifier,
    image: &Tensor,
    map: &PooledMap,
    segments: &SegmentMap,
    target: usize,
    seed: u64,
) -> Result<FlipCurve> {
    if segments.height != map.height || segments.width != map.width {
        return Err(Error::invalid("segment map does not match the heatmap"));
    }
    let m = segments.foreground_segments();
    if m < 2 {
        return Err(Error::undefined(format!("IROF needs at least two foreground segments, got {m}")));
    }
    let p0 = base_probability(classifier, image, target)?;
    let means = segment_means(map, segments);
    let order = descending(&means, &tie_keys(m, seed));
    let members = segments.members();
    let fill = foreground_mean(image, &map.foreground);
    let mut img = image.clone();
    let mut curve = FlipCurve { x: vec![0.0], y: vec![1.0] };
    for (k, s) in order.into_iter().enumerate() {
        replace(&mut img, &members[s + 1], &fill);
        let p = classifier.probabilities(&img)?[target];
        curve.x.push((k + 1) as f64 / m as f64);
        curve.y.push((p / p0).clamp(0.0, 1.0));
    }
    Ok(curve)
}

pub fn irof(
    classifier: &dyn Classifier,
    image: &Tensor,
    map: &PooledMap,
    segments: &SegmentMap,
    target: usize,
    seed: u64,
) -> Result<f64> {
    Ok(irof_curve(classifier, image, map, segments, target, seed)?.area_over(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::Pooling;
    use crate::nn::FnClassifier;
    use proptest::prelude::*;
    use rand::Rng;

    const H: usize = 8;
    const W: usize = 8;

    fn toy_image() -> Tensor {
        let d: Vec<f64> = (0..3 * H * W).map(|i| 0.2 + 0.6 * ((i * 37 % 64) as f64 / 64.0)).collect();
        Tensor::new(vec![3, H, W], d).unwrap()
    }

    /// Softmax of a sharp function of one pixel, so replacing that pixel by
    /// the mean collapses the probability.
    fn reads(pixel: usize) -> impl Fn(&Tensor) -> Vec<f64> + Send + Sync {
        move |x: &Tensor| {
            let v = x.data()[pixel];
            let p = 1.0 / (1.0 + (-40.0 * (v - 0.7)).exp());
            vec![p, 1.0 - p]
        }
    }

    fn map(values: Vec<f64>) -> PooledMap {
        PooledMap::new(H, W, values, Pooling::Mean, vec![true; H * W]).unwrap()
    }

    fn one_hot(p: usize) -> PooledMap {
        let mut v = vec![0.0; H * W];
        v[p] = 1.0;
        map(v)
    }

    #[test]
    fn trapezoid_with_interpolated_end() {
        let c = FlipCurve { x: vec![0.0, 0.1, 0.3], y: vec![1.0, 0.5, 0.5] };
        // 0.1·0.25 + 0.1·0.5
        assert!((c.area_over(0.2) - 0.075).abs() < 1e-15);
    }

    #[test]
    fn read_pixel_first_is_best_single_pixel_map() {
        let img = toy_image();
        let target_pixel = 19;
        // make the read pixel far from the mean
        let mut d = img.data().to_vec();
        d[target_pixel] = 0.98;
        let img = Tensor::new(vec![3, H, W], d).unwrap();
        let clf = FnClassifier::new(2, reads(target_pixel));
        let best = pixel_flipping(&clf, &img, &one_hot(target_pixel), 0, 0.2, 1).unwrap();
        for p in 0..H * W {
            let s = pixel_flipping(&clf, &img, &one_hot(p), 0, 0.2, 1).unwrap();
            assert!(s <= best, "pixel {p}: {s} > {best}");
        }
        assert!(best > 0.9);
    }

    #[test]
    fn constant_model_scores_zero() {
        let clf = FnClassifier::new(2, |_: &Tensor| vec![0.3, 0.7]);
        let img = toy_image();
        let m = map((0..H * W).map(|i| i as f64).collect());
        assert_eq!(pixel_flipping(&clf, &img, &m, 0, 0.2, 0).unwrap(), 0.0);
        let seg = quadrant_segments();
        assert_eq!(irof(&clf, &img, &m, &seg, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn random_maps_score_lower_than_the_oracle() {
        let target_pixel = 42;
        let mut d = toy_image().data().to_vec();
        d[target_pixel] = 0.98;
        let img = Tensor::new(vec![3, H, W], d).unwrap();
        let clf = FnClassifier::new(2, reads(target_pixel));
        let oracle = pixel_flipping(&clf, &img, &one_hot(target_pixel), 0, 0.2, 0).unwrap();
        let mut rng = crate::rng::stream_rng(5, 0);
        let scores: Vec<f64> = (0..100)
            .map(|t| {
                let m = map((0..H * W).map(|_| rng.random::<f64>()).collect());
                pixel_flipping(&clf, &img, &m, 0, 0.2, t).unwrap()
            })
            .collect();
        let mean = scores.iter().sum::<f64>() / 100.0;
        let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        // one-sided t statistic against the oracle value, p < 0.01 ⇔ t > 2.36
        let t = (oracle - mean) / (sd / 10.0);
        assert!(t > 2.36, "t = {t}");
    }

    /// Six segments: 2×3 blocks of a 8×8 grid (uneven widths at the edge).
    fn six_segments() -> SegmentMap {
        let labels = (0..H * W)
            .map(|p| {
                let (y, x) = (p / W, p % W);
                (1 + (y / 4) * 3 + (x / 3).min(2)) as u32
            })
            .collect();
        SegmentMap { height: H, width: W, labels, count: 7 }
    }

    fn quadrant_segments() -> SegmentMap {
        let labels = (0..H * W).map(|p| (1 + (p / W / 4) * 2 + (p % W) / 4) as u32).collect();
        SegmentMap { height: H, width: W, labels, count: 5 }
    }

    #[test]
    fn irof_prefers_the_read_segment() {
        let seg = six_segments();
        let target_pixel = 5 * W + 4;
        let mut d = toy_image().data().to_vec();
        d[target_pixel] = 0.98;
        let img = Tensor::new(vec![3, H, W], d).unwrap();
        let clf = FnClassifier::new(2, reads(target_pixel));
        let read_seg = seg.labels[target_pixel];
        let score_for = |s: u32| {
            let m = map(seg.labels.iter().map(|&l| if l == s { 1.0 } else { 0.0 }).collect());
            irof(&clf, &img, &m, &seg, 0, 3).unwrap()
        };
        let best = score_for(read_seg);
        for s in 1..7 {
            assert!(score_for(s) <= best);
        }
    }

    #[test]
    fn irof_depends_only_on_segment_means() {
        let seg = six_segments();
        let img = toy_image();
        let clf = FnClassifier::new(2, |x: &Tensor| {
            let v = (x.data()[10] + x.data()[50] * 2.0).tanh();
            vec![v, 1.0 - v]
        });
        let pixel = map((0..H * W).map(|i| ((i * 13) % 7) as f64).collect());
        let means = segment_means(&pixel, &seg);
        let constant = map(seg.labels.iter().map(|&l| means[l as usize - 1]).collect());
        assert_eq!(irof(&clf, &img, &pixel, &seg, 0, 1).unwrap(), irof(&clf, &img, &constant, &seg, 0, 1).unwrap());
    }

    #[test]
    fn single_segment_is_rejected() {
        let seg = SegmentMap { height: H, width: W, labels: vec![1; H * W], count: 2 };
        let clf = FnClassifier::new(2, |_: &Tensor| vec![0.5, 0.5]);
        assert!(irof(&clf, &toy_image(), &map(vec![0.0; H * W]), &seg, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn flipping_scores_are_bounded_and_order_only(v in proptest::collection::vec(-2.0f64..2.0, H * W)) {
            let clf = FnClassifier::new(2, |x: &Tensor| {
                let s: f64 = x.data().iter().step_by(5).sum::<f64>() / 40.0;
                let v = 1.0 / (1.0 + (-4.0 * (s - 0.2)).exp());
                vec![v, 1.0 - v]
            });
            let img = toy_image();
            let a = map(v.clone());
            let b = a.map(|x| x * x * x + x);
            let pa = pixel_flipping(&clf, &img, &a, 0, 0.2, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&pa));
            prop_assert_eq!(pa, pixel_flipping(&clf, &img, &b, 0, 0.2, 4).unwrap());
            let seg = six_segments();
            let ia = irof(&clf, &img, &a, &seg, 0, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&ia));
            // segment means commute with monotone maps only on
            // segment-constant heatmaps
            let means = segment_means(&a, &seg);
            let c = map(seg.labels.iter().map(|&l| means[l as usize - 1]).collect());
            let c3 = c.map(|x| x * x * x + x);
            prop_assert_eq!(irof(&clf, &img, &c, &seg, 0, 4).unwrap(), irof(&clf, &img, &c3, &seg, 0, 4).unwrap());
        }
    }
}
