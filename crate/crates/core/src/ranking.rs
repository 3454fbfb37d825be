//! Final ranking of attribution methods: per-column rankings are merged by
//! mean reciprocal rank (MRR) within each metric group, the group rankings
//! are merged by MRR again, and the whole procedure can be repeated on
//! scores drawn from Normal(mean, sem) to expose ranking uncertainty.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::method::MethodId;
use crate::metrics::{mean_sem, Direction, MetricScore};
use crate::order::{descending, tie_keys};
use crate::rng::{derive_seed, stream_rng, tag};

/// Group id → column selectors. A selector matches a column equal to it or
/// starting with `selector/`, so `irof` selects every IROF pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment(pub BTreeMap<String, Vec<String>>);

impl GroupAssignment {
    pub fn standard() -> Self {
        let mut g = BTreeMap::new();
        g.insert("aug-robustness".into(), vec!["robustness".into()]);
        g.insert(
            "quality-no-gt".into(),
            vec!["pixel-flipping".into(), "irof".into(), "sensitivity".into(), "complexity".into()],
        );
        g.insert("ground-truth".into(), vec!["roc-auc".into(), "relevance-mass-accuracy".into()]);
        Self(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::data::io::read_json(path)
    }

    fn group_of(&self, column: &str) -> Result<String> {
        let hits: Vec<&String> = self
            .0
            .iter()
            .filter(|(_, sel)| sel.iter().any(|s| column == s || column.starts_with(&format!("{s}/"))))
            .map(|(g, _)| g)
            .collect();
        match hits.as_slice() {
            [g] => Ok((*g).clone()),
            [] => Err(Error::invalid(format!("column `{column}` belongs to no metric group"))),
            _ => Err(Error::invalid(format!("column `{column}` belongs to several groups: {hits:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub sem: f64,
    pub imputed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub group: String,
    pub direction: Direction,
}

/// Methods × columns of metric means, possibly with gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub methods: Vec<MethodId>,
    pub columns: Vec<Column>,
    /// `cells[method][column]`
    pub cells: Vec<Vec<Option<Cell>>>,
}

impl MetricTable {
    /// Collects scores into a table. `methods` fixes the row set; scores
    /// of other methods are ignored and absent cells stay empty.
    pub fn from_scores(scores: &[MetricScore], methods: &[MethodId], groups: &GroupAssignment) -> Result<Self> {
        let mut columns: Vec<Column> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for s in scores {
            let name = s.column();
            if !index.contains_key(&name) {
                index.insert(name.clone(), columns.len());
                columns.push(Column {
                    group: groups.group_of(&name)?,
                    name,
                    direction: s.direction,
                });
            }
        }
        let mut cells = vec![vec![None; columns.len()]; methods.len()];
        for s in scores {
            if let Some(r) = methods.iter().position(|m| *m == s.method) {
                if !(s.mean.is_finite() && s.sem.is_finite() && s.sem >= 0.0) {
                    return Err(Error::invalid(format!("bad score for {} / {}", s.method, s.column())));
                }
                cells[r][index[&s.column()]] = Some(Cell {
                    mean: s.mean,
                    sem: s.sem,
                    imputed: false,
                });
            }
        }
        for g in groups.0.keys() {
            if !columns.iter().any(|c| &c.group == g) {
                return Err(Error::invalid(format!("metric group `{g}` has no columns")));
            }
        }
        Ok(Self { methods: methods.to_vec(), columns, cells })
    }

    fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.columns.iter().map(|c| c.group.clone()).collect();
        g.sort();
        g.dedup();
        g
    }

    fn column_values(&self, j: usize) -> Vec<f64> {
        self.cells.iter().map(|row| row[j].expect("imputed table").mean).collect()
    }
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Fills gaps with the column median of the present means (and of the
/// present sems), flagging the filled cells.
pub fn impute(table: &MetricTable) -> Result<MetricTable> {
    let mut out = table.clone();
    for (j, col) in table.columns.iter().enumerate() {
        let present: Vec<Cell> = table.cells.iter().filter_map(|row| row[j]).collect();
        if present.is_empty() {
            return Err(Error::invalid(format!("column `{}` has no values to impute from", col.name)));
        }
        let m = median(&present.iter().map(|c| c.mean).collect::<Vec<_>>()).expect("non-empty");
        let s = median(&present.iter().map(|c| c.sem).collect::<Vec<_>>()).expect("non-empty");
        for row in out.cells.iter_mut() {
            if row[j].is_none() {
                row[j] = Some(Cell { mean: m, sem: s, imputed: true });
            }
        }
    }
    Ok(out)
}

/// Least common multiple of 1..=n, so reciprocal ranks sum exactly as
/// integers.
fn rank_scale(n: usize) -> u128 {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    (1..=n as u128).fold(1, |l, k| l / gcd(l, k) * k)
}

/// MRR of each item over rankings of positions `0..m`. Each ranking lists
/// item indices best first. Returns exact scaled sums and the float MRR.
fn mrr_exact(rankings: &[Vec<usize>], m: usize) -> Result<(Vec<u128>, Vec<f64>)> {
    if rankings.is_empty() {
        return Err(Error::invalid("MRR needs at least one ranking"));
    }
    let scale = rank_scale(m);
    let mut sums = vec![0u128; m];
    for r in rankings {
        let mut seen = vec![false; m];
        if r.len() != m {
            return Err(Error::invalid("rankings cover different method sets"));
        }
        for (pos, &i) in r.iter().enumerate() {
            if i >= m || seen[i] {
                return Err(Error::invalid("rankings cover different method sets"));
            }
            seen[i] = true;
            sums[i] += scale / (pos as u128 + 1);
        }
    }
    let n = rankings.len() as f64;
    let f = sums.iter().map(|s| *s as f64 / scale as f64 / n).collect();
    Ok((sums, f))
}

/// Mean reciprocal rank of each method over rankings (best first).
pub fn mrr(rankings: &[Vec<MethodId>]) -> Result<BTreeMap<MethodId, f64>> {
    let first = rankings.first().ok_or_else(|| Error::invalid("MRR needs at least one ranking"))?;
    let idx: Vec<Vec<usize>> = rankings
        .iter()
        .map(|r| {
            r.iter()
                .map(|m| first.iter().position(|x| x == m).ok_or_else(|| Error::invalid(format!("{m} missing from the first ranking"))))
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<_>>()?;
    let (_, f) = mrr_exact(&idx, first.len())?;
    Ok(first.iter().copied().zip(f).collect())
}

/// Items sorted by exact MRR descending, ties broken by `keys`.
fn order_by(sums: &[u128], keys: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sums.len()).collect();
    idx.sort_by(|&a, &b| sums[b].cmp(&sums[a]).then(keys[b].cmp(&keys[a])));
    idx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingMode {
    MeansOnly,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedMethod {
    pub position: usize,
    pub method: MethodId,
    pub mrr: f64,
    pub uncertainty: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub mode: RankingMode,
    pub rows: Vec<RankedMethod>,
    /// Group id → method order within that group (means-only mode).
    pub groups: BTreeMap<String, Vec<MethodId>>,
    pub repetitions: usize,
}

impl RankingResult {
    pub fn order(&self) -> Vec<MethodId> {
        self.rows.iter().map(|r| r.method).collect()
    }
}

/// One pass of the ranking procedure on an imputed table. Returns the final
/// order (method indices) with exact MRR sums and group orders.
fn rank_indices(table: &MetricTable, seed: u64) -> Result<(Vec<usize>, Vec<u128>, usize, BTreeMap<String, Vec<usize>>)> {
    let m = table.methods.len();
    if m == 0 {
        return Err(Error::invalid("no methods to rank"));
    }
    let mut rng = stream_rng(seed, tag::TIE_BREAK);
    let mut group_orders = BTreeMap::new();
    let groups = table.groups();
    if groups.is_empty() {
        return Err(Error::invalid("no metric groups"));
    }
    for g in &groups {
        let mut rankings = Vec::new();
        for (j, col) in table.columns.iter().enumerate().filter(|(_, c)| &c.group == g) {
            let v = table.column_values(j);
            let keys = tie_keys(m, rng.random());
            let order = match col.direction {
                Direction::HigherBetter => descending(&v, &keys),
                Direction::LowerBetter => {
                    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
                    descending(&neg, &keys)
                }
            };
            rankings.push(order);
        }
        let (sums, _) = mrr_exact(&rankings, m)?;
        group_orders.insert(g.clone(), order_by(&sums, &tie_keys(m, rng.random())));
    }
    let lists: Vec<Vec<usize>> = group_orders.values().cloned().collect();
    let (sums, _) = mrr_exact(&lists, m)?;
    let order = order_by(&sums, &tie_keys(m, rng.random()));
    Ok((order, sums, lists.len(), group_orders))
}

/// Means-only ranking. Missing cells are median-imputed first.
pub fn rank_once(table: &MetricTable, seed: u64) -> Result<RankingResult> {
    let table = impute(table)?;
    let (order, sums, n, groups) = rank_indices(&table, seed)?;
    let scale = rank_scale(table.methods.len()) as f64;
    Ok(RankingResult {
        mode: RankingMode::MeansOnly,
        rows: order
            .iter()
            .enumerate()
            .map(|(pos, &i)| RankedMethod {
                position: pos + 1,
                method: table.methods[i],
                mrr: sums[i] as f64 / scale / n as f64,
                uncertainty: None,
            })
            .collect(),
        groups: groups
            .into_iter()
            .map(|(g, o)| (g, o.into_iter().map(|i| table.methods[i]).collect()))
            .collect(),
        repetitions: 1,
    })
}

/// Repeats the ranking `n` times on scores drawn independently from
/// Normal(mean, sem) and merges the final rankings by MRR. The reported
/// uncertainty is the standard error of each method's reciprocal ranks.
pub fn rank_monte_carlo(table: &MetricTable, n: usize, seed: u64) -> Result<RankingResult> {
    if n < 2 {
        return Err(Error::invalid("Monte-Carlo ranking needs at least two repetitions"));
    }
    let table = impute(table)?;
    let m = table.methods.len();
    let mut finals = Vec::with_capacity(n);
    for rep in 0..n {
        let rep_seed = derive_seed(seed, tag::RANKING + rep as u64);
        let mut rng = stream_rng(rep_seed, tag::RANKING);
        let mut sampled = table.clone();
        for row in sampled.cells.iter_mut() {
            for c in row.iter_mut().flatten() {
                if c.sem > 0.0 {
                    c.mean = Normal::new(c.mean, c.sem)
                        .map_err(|e| Error::invalid(format!("bad score distribution: {e}")))?
                        .sample(&mut rng);
                }
            }
        }
        finals.push(rank_indices(&sampled, rep_seed)?.0);
    }
    let (sums, mrr) = mrr_exact(&finals, m)?;
    let mut recips = vec![Vec::with_capacity(n); m];
    for r in &finals {
        for (pos, &i) in r.iter().enumerate() {
            recips[i].push(1.0 / (pos + 1) as f64);
        }
    }
    let order = order_by(&sums, &tie_keys(m, derive_seed(seed, tag::RANKING)));
    Ok(RankingResult {
        mode: RankingMode::MonteCarlo,
        rows: order
            .iter()
            .enumerate()
            .map(|(pos, &i)| RankedMethod {
                position: pos + 1,
                method: table.methods[i],
                mrr: mrr[i],
                uncertainty: Some(mean_sem(&recips[i]).expect("n ≥ 2").1),
            })
            .collect(),
        groups: BTreeMap::new(),
        repetitions: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricId;
    use proptest::prelude::*;
    use MethodId::{Gradients as A, Lime as B, Occlusion as C};

    fn score(metric: MetricId, method: MethodId, pooling: Option<crate::heatmap::Pooling>, mean: f64, sem: f64) -> MetricScore {
        MetricScore {
            metric,
            method,
            pooling,
            augmentation: None,
            mean,
            sem,
            n: 10,
            direction: metric.direction(),
        }
    }

    fn groups(spec: &[(&str, &[&str])]) -> GroupAssignment {
        GroupAssignment(spec.iter().map(|(g, s)| (g.to_string(), s.iter().map(|x| x.to_string()).collect())).collect())
    }

    /// g1 = pixel-flipping/{mean, max} (higher better), g2 = complexity
    /// (lower better), g3 = roc-auc.
    fn toy(sem: f64) -> (MetricTable, GroupAssignment) {
        use crate::heatmap::Pooling::{Max, Mean};
        let g = groups(&[("g1", &["pixel-flipping"]), ("g2", &["complexity"]), ("g3", &["roc-auc"])]);
        let s = vec![
            score(MetricId::PixelFlipping, A, Some(Mean), 0.9, sem),
            score(MetricId::PixelFlipping, B, Some(Mean), 0.5, sem),
            score(MetricId::PixelFlipping, C, Some(Mean), 0.1, sem),
            score(MetricId::PixelFlipping, A, Some(Max), 0.2, sem),
            score(MetricId::PixelFlipping, B, Some(Max), 0.8, sem),
            score(MetricId::PixelFlipping, C, Some(Max), 0.4, sem),
            score(MetricId::Complexity, A, None, 0.3, sem),
            score(MetricId::Complexity, B, None, 0.1, sem),
            score(MetricId::Complexity, C, None, 0.2, sem),
            score(MetricId::RocAuc, A, None, 0.7, sem),
            score(MetricId::RocAuc, B, None, 0.6, sem),
            score(MetricId::RocAuc, C, None, 0.9, sem),
        ];
        (MetricTable::from_scores(&s, &[A, B, C], &g).unwrap(), g)
    }

    #[test]
    fn mrr_formula() {
        let r = mrr(&[vec![A, B, C], vec![B, A, C]]).unwrap();
        assert_eq!(r[&A], 0.75);
        assert_eq!(r[&B], 0.75);
        assert!((r[&C] - 1.0 / 3.0).abs() < 1e-15);
        assert!(mrr(&[vec![A, B], vec![A, C]]).is_err());
        assert_eq!(mrr(&[vec![A, B], vec![A, B]]).unwrap()[&A], 1.0);
    }

    #[test]
    fn medians_and_imputation() {
        assert_eq!(median(&[0.6, 0.2, 0.4]), Some(0.4));
        assert_eq!(median(&[0.9, 0.1, 0.5, 0.3]), Some(0.4));
        let (mut t, _) = toy(0.01);
        assert_eq!(impute(&t).unwrap(), t);
        t.cells[1][0] = None;
        let filled = impute(&t).unwrap();
        let c = filled.cells[1][0].unwrap();
        assert!(c.imputed);
        assert_eq!(c.mean, 0.5);
        for row in t.cells.iter_mut() {
            row[0] = None;
        }
        assert!(impute(&t).is_err());
    }

    #[test]
    fn toy_table_matches_hand_enumeration() {
        // pixel-flipping/mean: A B C; pixel-flipping/max: B C A
        //   g1 MRR A=(1+1/3)/2 B=(1/2+1)/2 C=(1/3+1/2)/2  →  B A C
        // complexity (lower better): B C A  →  g2 = B C A
        // roc-auc: C A B  →  g3 = C A B
        // final: A=(1/2+1/3+1/2)/3=4/9  B=(1+1+1/3)/3=7/9  C=(1/3+1/2+1)/3=11/18
        let (t, _) = toy(0.0);
        let r = rank_once(&t, 0).unwrap();
        assert_eq!(r.order(), vec![B, C, A]);
        assert_eq!(r.groups["g1"], vec![B, A, C]);
        assert_eq!(r.groups["g2"], vec![B, C, A]);
        assert_eq!(r.groups["g3"], vec![C, A, B]);
        let expect = [7.0 / 9.0, 11.0 / 18.0, 4.0 / 9.0];
        for (row, e) in r.rows.iter().zip(expect) {
            assert!((row.mrr - e).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_method_wins_everything() {
        let g = groups(&[("g1", &["irof"]), ("g2", &["sensitivity"])]);
        let s = vec![
            score(MetricId::Irof, A, None, 0.9, 0.0),
            score(MetricId::Irof, B, None, 0.1, 0.0),
            score(MetricId::Sensitivity, A, None, 0.1, 0.0),
            score(MetricId::Sensitivity, B, None, 0.9, 0.0),
        ];
        let r = rank_once(&MetricTable::from_scores(&s, &[A, B], &g).unwrap(), 3).unwrap();
        assert_eq!(r.rows[0].method, A);
        assert_eq!(r.rows[0].mrr, 1.0);
    }

    #[test]
    fn duplicated_single_metric_group_changes_nothing() {
        let (t, _) = toy(0.0);
        let mut dup = t.clone();
        let j = dup.columns.iter().position(|c| c.group == "g2").unwrap();
        let mut col = dup.columns[j].clone();
        col.name.push_str("-copy");
        dup.columns.push(col);
        for row in dup.cells.iter_mut() {
            let c = row[j];
            row.push(c);
        }
        for seed in 0..5 {
            assert_eq!(rank_once(&t, seed).unwrap().rows, rank_once(&dup, seed).unwrap().rows);
        }
    }

    #[test]
    fn empty_group_and_unassigned_columns_are_rejected() {
        let g = groups(&[("g1", &["irof"]), ("g2", &["roc-auc"])]);
        let s = vec![score(MetricId::Irof, A, None, 0.9, 0.0)];
        assert!(MetricTable::from_scores(&s, &[A], &g).is_err());
        let s = vec![score(MetricId::Complexity, A, None, 0.9, 0.0)];
        assert!(MetricTable::from_scores(&s, &[A], &g).is_err());
    }

    #[test]
    fn zero_sem_monte_carlo_equals_means_only() {
        let (t, _) = toy(0.0);
        let once = rank_once(&t, 1).unwrap();
        let mc = rank_monte_carlo(&t, 20, 1).unwrap();
        assert_eq!(mc.order(), once.order());
        assert!(mc.rows.iter().all(|r| r.uncertainty == Some(0.0)));
        let (t, _) = toy(1e-12);
        assert_eq!(rank_monte_carlo(&t, 20, 1).unwrap().order(), once.order());
        assert!(rank_monte_carlo(&t, 1, 1).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let (t, _) = toy(0.3);
        assert_eq!(rank_monte_carlo(&t, 50, 9).unwrap(), rank_monte_carlo(&t, 50, 9).unwrap());
    }

    #[test]
    fn overlapping_normals_match_direct_simulation() {
        let g = groups(&[("g", &["irof"])]);
        let s = vec![score(MetricId::Irof, A, None, 0.50, 0.05), score(MetricId::Irof, B, None, 0.52, 0.05)];
        let t = MetricTable::from_scores(&s, &[A, B], &g).unwrap();
        let n = 2000;
        let r = rank_monte_carlo(&t, n, 4).unwrap();
        let mrr_b = r.rows.iter().find(|x| x.method == B).unwrap().mrr;
        // with two methods MRR = f + (1 − f)/2
        let f = 2.0 * mrr_b - 1.0;
        let mut rng = stream_rng(77, 0);
        let (x, y) = (Normal::new(0.50, 0.05).unwrap(), Normal::new(0.52, 0.05).unwrap());
        let draws = 1_000_000;
        let wins = (0..draws).filter(|_| y.sample(&mut rng) > x.sample(&mut rng)).count();
        let p = wins as f64 / draws as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!(f > 0.0 && f < 1.0);
        assert!((f - p).abs() < 3.0 * sigma, "{f} vs {p} ± {sigma}");
    }

    proptest! {
        #[test]
        fn mrr_bounds(perms in proptest::collection::vec(Just((0..5).collect::<Vec<usize>>()).prop_shuffle(), 1..10)) {
            let (_, f) = mrr_exact(&perms, 5).unwrap();
            for v in f {
                prop_assert!(v >= 0.2 - 1e-12 && v <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn monotone_transform_of_one_column_keeps_ranking(seed in 0u64..50, col in 0usize..4) {
            let (t, _) = toy(0.0);
            let mut u = t.clone();
            for row in u.cells.iter_mut() {
                if let Some(c) = row[col].as_mut() {
                    c.mean = c.mean.powi(3) + c.mean;
                }
            }
            prop_assert_eq!(rank_once(&t, seed).unwrap().order(), rank_once(&u, seed).unwrap().order());
        }
    }
}
