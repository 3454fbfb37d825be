//! Agreement of heatmaps with pixel annotations.

use crate::data::AnnotationClass;
use crate::error::{Error, Result};
use crate::heatmap::PooledMap;
use crate::order::midranks;

/// Probability that a random `hi` score exceeds a random `lo` score, ties
/// counting one half (Mann–Whitney with mid-ranks).
pub fn pairwise_auc(hi: &[f64], lo: &[f64]) -> f64 {
    let mut all = hi.to_vec();
    all.extend_from_slice(lo);
    let r = midranks(&all);
    let (nh, nl) = (hi.len() as f64, lo.len() as f64);
    let rank_sum: f64 = r[..hi.len()].iter().sum();
    (rank_sum - nh * (nh + 1.0) / 2.0) / (nh * nl)
}

/// ROC-AUC of the heatmap against the annotation over foreground pixels.
/// With two classes present this is the ordinary AUC (positive above
/// neutral); with three it is the mean of the pairwise AUCs under the order
/// negative < neutral < positive.
pub fn roc_auc(map: &PooledMap, annotation: &[AnnotationClass]) -> Result<f64> {
    if annotation.len() != map.values.len() {
        return Err(Error::invalid("annotation does not match the heatmap"));
    }
    let classes = [AnnotationClass::Negative, AnnotationClass::Neutral, AnnotationClass::Positive];
    let groups: Vec<Vec<f64>> = classes
        .iter()
        .map(|c| {
            (0..map.values.len())
                .filter(|&p| map.foreground[p] && annotation[p] == *c)
                .map(|p| map.values[p])
                .collect()
        })
        .collect();
    let present: Vec<usize> = (0..3).filter(|&i| !groups[i].is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::undefined("annotation has a single class on the foreground"));
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for (a, &lo) in present.iter().enumerate() {
        for &hi in &present[a + 1..] {
            total += pairwise_auc(&groups[hi], &groups[lo]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Share of positive attribution mass that falls inside `mask`. Negative
/// values are clipped to zero first.
pub fn relevance_mass_accuracy(map: &PooledMap, mask: &[bool]) -> Result<f64> {
    if mask.len() != map.values.len() {
        return Err(Error::invalid("mask does not match the heatmap"));
    }
    let mut inside = 0.0;
    let mut total = 0.0;
    for p in 0..map.values.len() {
        if !map.foreground[p] {
            continue;
        }
        let v = map.values[p].max(0.0);
        total += v;
        if mask[p] {
            inside += v;
        }
    }
    if total <= 0.0 {
        return Err(Error::undefined("no positive attribution"));
    }
    Ok(inside / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::Pooling;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use AnnotationClass::*;

    fn map(values: Vec<f64>) -> PooledMap {
        let n = values.len();
        PooledMap::new(1, n, values, Pooling::MaxAbs, vec![true; n]).unwrap()
    }

    fn brute_auc(hi: &[f64], lo: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in hi {
            for b in lo {
                s += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        s / (hi.len() * lo.len()) as f64
    }

    #[test]
    fn four_pixel_fixture() {
        let m = map(vec![0.9, 0.8, 0.7, 0.6]);
        let ann = [Positive, Neutral, Positive, Neutral];
        assert_eq!(roc_auc(&m, &ann).unwrap(), 0.75);
    }

    #[test]
    fn perfect_separation_and_single_class() {
        let m = map(vec![5.0, 4.0, 1.0, 0.0]);
        assert_eq!(roc_auc(&m, &[Positive, Positive, Neutral, Neutral]).unwrap(), 1.0);
        assert!(matches!(roc_auc(&m, &[Neutral; 4]), Err(Error::Undefined(_))));
    }

    #[test]
    fn three_classes_average_the_pairs() {
        let m = map(vec![0.0, 1.0, 2.0, 3.0, 0.5, 2.5]);
        let ann = [Negative, Neutral, Positive, Positive, Neutral, Negative];
        let g = |c: AnnotationClass| -> Vec<f64> { (0..6).filter(|&i| ann[i] == c).map(|i| m.values[i]).collect() };
        let expect = (brute_auc(&g(Neutral), &g(Negative)) + brute_auc(&g(Positive), &g(Negative)) + brute_auc(&g(Positive), &g(Neutral))) / 3.0;
        assert!((roc_auc(&m, &ann).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn permuted_scores_average_one_half() {
        let n = 400;
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ann: Vec<AnnotationClass> = (0..n).map(|i| if i < 100 { Positive } else { Neutral }).collect();
        let mut rng = crate::rng::stream_rng(1, 0);
        let mut total = 0.0;
        for _ in 0..200 {
            let mut v = values.clone();
            v.shuffle(&mut rng);
            total += roc_auc(&map(v), &ann).unwrap();
        }
        assert!((total / 200.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn rma_cases() {
        let m = map(vec![1.0, 3.0, -2.0, 0.0]);
        assert_eq!(relevance_mass_accuracy(&m, &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(relevance_mass_accuracy(&m, &[false; 4]).unwrap(), 0.0);
        let half = map(vec![1.0, 1.0, 2.0, 0.0]);
        assert_eq!(relevance_mass_accuracy(&half, &[false, false, true, false]).unwrap(), 0.5);
        assert!(relevance_mass_accuracy(&map(vec![-1.0, 0.0]), &[true, true]).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting_and_is_rank_only(
            v in proptest::collection::vec(-3i32..3, 2..40),
            split in 1usize..39,
        ) {
            let split = split.min(v.len() - 1);
            let x: Vec<f64> = v.iter().map(|&i| i as f64 * 0.5).collect();
            let ann: Vec<AnnotationClass> = (0..x.len()).map(|i| if i < split { Positive } else { Neutral }).collect();
            let auc = roc_auc(&map(x.clone()), &ann).unwrap();
            prop_assert!((auc - brute_auc(&x[..split], &x[split..])).abs() < 1e-12);
            let y = map(x.iter().map(|a| a * a * a + a).collect());
            prop_assert_eq!(auc, roc_auc(&y, &ann).unwrap());
        }
    }
}
