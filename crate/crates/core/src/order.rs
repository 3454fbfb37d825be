//! Orderings with random tie-breaking.
//!
//! Ties are broken by sorting on `(value, key)` where the keys are seeded
//! random integers. This is the limit of adding infinitesimal noise: the
//! order of distinct values is never changed, equal values are ordered at
//! random, and any strictly increasing transform of the values leaves the
//! result bit-identical.

use rand::RngCore;

use crate::rng::{stream_rng, tag};

/// Random tie-break keys for `n` items.
pub fn tie_keys(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = stream_rng(seed, tag::TIE_BREAK);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Positions `0..values.len()` sorted by ascending value, ties by `keys`.
pub fn ascending(values: &[f64], keys: &[u64]) -> Vec<usize> {
    assert_eq!(values.len(), keys.len());
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(keys[a].cmp(&keys[b])));
    idx
}

/// Positions sorted by descending value; tied items keep the same random
/// order as [`ascending`] reversed.
pub fn descending(values: &[f64], keys: &[u64]) -> Vec<usize> {
    let mut idx = ascending(values, keys);
    idx.reverse();
    idx
}

/// 1-based ascending ranks with ties broken by `keys`.
pub fn ranks(values: &[f64], keys: &[u64]) -> Vec<usize> {
    let mut r = vec![0; values.len()];
    for (pos, i) in ascending(values, keys).into_iter().enumerate() {
        r[i] = pos + 1;
    }
    r
}

/// Ascending mid-ranks (ties share the average of their positions).
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn ties_are_broken_by_seed() {
        let v = vec![1.0; 50];
        let a = ascending(&v, &tie_keys(50, 1));
        let b = ascending(&v, &tie_keys(50, 2));
        assert_ne!(a, b);
        assert_eq!(a, ascending(&v, &tie_keys(50, 1)));
    }

    proptest! {
        #[test]
        fn monotone_transform_keeps_order(v in proptest::collection::vec(-5i32..5, 1..60), seed in 0u64..100) {
            let x: Vec<f64> = v.iter().map(|&i| i as f64 * 0.5).collect();
            let y: Vec<f64> = x.iter().map(|a| a * a * a + a).collect();
            let keys = tie_keys(x.len(), seed);
            prop_assert_eq!(ascending(&x, &keys), ascending(&y, &keys));
        }

        #[test]
        fn distinct_values_sorted(v in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
            let keys = tie_keys(v.len(), 0);
            let order = ascending(&v, &keys);
            for w in order.windows(2) {
                prop_assert!(v[w[0]] <= v[w[1]]);
            }
        }
    }
}
