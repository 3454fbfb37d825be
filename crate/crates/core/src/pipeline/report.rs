//! CSV, JSON and Markdown renderings of metric scores and rankings.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::evaluate::{ReferenceScore, GROUND_TRUTH};
use crate::data::DefectKind;
use crate::error::{Error, Result};
use crate::heatmap::Pooling;
use crate::method::MethodId;
use crate::metrics::{Direction, MetricId, MetricScore};
use crate::ranking::RankingResult;
use crate::robustness::{AugmentationKind, Calibration};

/// Contents of `metrics/scores.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoresFile {
    pub config_hash: String,
    pub kind: DefectKind,
    pub images: usize,
    pub methods: Vec<MethodId>,
    pub scores: Vec<MetricScore>,
    pub references: Vec<ReferenceScore>,
    pub calibrations: Vec<Calibration>,
    pub skipped: usize,
}

/// Contents of a ranking JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingFile {
    pub config_hash: String,
    pub kind: DefectKind,
    pub result: RankingResult,
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Serialises `rows` as CSV below a `# config_hash=` comment line.
/// Writes `rows` under a `# config_hash=` comment line. `header` is only
/// used when there are no rows; otherwise it comes from the field names.
pub fn write_csv<T: Serialize>(path: &Path, config_hash: &str, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let body = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    let mut text = format!("# config_hash={config_hash}\n").into_bytes();
    text.extend(body);
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    metric: MetricId,
    method: &'a str,
    pooling: Option<Pooling>,
    augmentation: Option<AugmentationKind>,
    mean: f64,
    sem: f64,
    n: usize,
    direction: Direction,
}

pub fn write_scores_csv(path: &Path, file: &ScoresFile) -> Result<()> {
    let mut rows: Vec<ScoreRow> = file
        .scores
        .iter()
        .map(|s| ScoreRow {
            metric: s.metric,
            method: s.method.id(),
            pooling: s.pooling,
            augmentation: s.augmentation,
            mean: s.mean,
            sem: s.sem,
            n: s.n,
            direction: s.direction,
        })
        .collect();
    rows.extend(file.references.iter().map(|r| ScoreRow {
        metric: r.metric,
        method: &r.subject,
        pooling: None,
        augmentation: None,
        mean: r.mean,
        sem: r.sem,
        n: r.n,
        direction: r.metric.direction(),
    }));
    write_csv(path, &file.config_hash, &[], &rows)
}

#[derive(Serialize)]
struct RankRow<'a> {
    position: usize,
    method: &'a str,
    mrr: f64,
    uncertainty: Option<f64>,
}

pub fn write_ranking_csv(path: &Path, config_hash: &str, result: &RankingResult) -> Result<()> {
    let rows: Vec<RankRow> = result
        .rows
        .iter()
        .map(|r| RankRow {
            position: r.position,
            method: r.method.id(),
            mrr: r.mrr,
            uncertainty: r.uncertainty,
        })
        .collect();
    write_csv(path, config_hash, &[], &rows)
}

fn md_table(header: &[String], rows: &[Vec<String>]) -> String {
    let line = |cells: &[String]| {
        let mut s = String::from("|");
        for c in cells {
            if c.is_empty() {
                s.push_str(" |");
            } else {
                s.push_str(&format!(" {c} |"));
            }
        }
        s.push('\n');
        s
    };
    let mut s = line(header);
    s.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in rows {
        s.push_str(&line(r));
    }
    s
}

fn pm(mean: f64, sem: f64) -> String {
    format!("{mean:.3} ± {sem:.3}")
}

/// Short decimal without trailing zeros.
fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn arrow(d: Direction) -> &'static str {
    match d {
        Direction::HigherBetter => "↑",
        Direction::LowerBetter => "↓",
    }
}

struct Lookup<'a> {
    by_key: HashMap<(MetricId, MethodId, Option<Pooling>, Option<AugmentationKind>), &'a MetricScore>,
}

impl<'a> Lookup<'a> {
    fn new(scores: &'a [MetricScore]) -> Self {
        Self {
            by_key: scores
                .iter()
                .map(|s| ((s.metric, s.method, s.pooling, s.augmentation), s))
                .collect(),
        }
    }

    fn get(&self, metric: MetricId, method: MethodId, pooling: Option<Pooling>, aug: Option<AugmentationKind>) -> Option<&'a MetricScore> {
        self.by_key.get(&(metric, method, pooling, aug)).copied()
    }
}

fn caption(metric: MetricId, n: usize, extra: &str) -> String {
    format!(
        "{} {} {}Uncertainties are standard errors of the mean ({n} images).\n",
        metric.display_name(),
        arrow(metric.direction()),
        extra
    )
}

/// All metric tables of one dataset kind as Markdown.
pub fn metrics_markdown(config: &RunConfig, file: &ScoresFile) -> String {
    let look = Lookup::new(&file.scores);
    let on = |m: MetricId| config.metrics.contains(&m);
    let mut out = format!(
        "# Metric tables: {}\n\n<!-- config_hash={} -->\n\nEvaluated on {} correctly classified test images.\n",
        file.kind, file.config_hash, file.images
    );
    let max_n = |metric: MetricId| {
        file.scores
            .iter()
            .filter(|s| s.metric == metric)
            .map(|s| s.n)
            .max()
            .unwrap_or(0)
    };

    if on(MetricId::Robustness) {
        let mut header = vec![String::new()];
        for c in &file.calibrations {
            let (lo, hi) = c.kind.interval(c.half_width);
            header.push(format!("{} [{}, {}]", c.kind.display_name(), num(lo), num(hi)));
        }
        let rows: Vec<Vec<String>> = config
            .methods
            .iter()
            .map(|&m| {
                let mut row = vec![m.display_name().to_string()];
                for c in &file.calibrations {
                    row.push(
                        look.get(MetricId::Robustness, m, None, Some(c.kind))
                            .map_or("-".into(), |s| pm(s.mean, s.sem)),
                    );
                }
                row
            })
            .collect();
        out.push_str("\n## Robustness to data augmentation\n\n");
        out.push_str(&md_table(&header, &rows));
        out.push('\n');
        out.push_str(&caption(
            MetricId::Robustness,
            max_n(MetricId::Robustness),
            "Intervals are calibrated so the mean target probability drops by the configured amount at one endpoint. Brightness, hue and saturation are invariant, the rest equivariant. Values below 1 mean the explanations are less robust than the classifier's probabilities. ",
        ));
    }

    let pooled_table = |metric: MetricId, poolings: &[Pooling], title: &str, extra: &str| -> String {
        let mut header = vec![String::new()];
        header.extend(poolings.iter().map(|p| p.display_name().to_string()));
        let mut rows: Vec<Vec<String>> = config
            .methods
            .iter()
            .map(|&m| {
                let mut row = vec![m.display_name().to_string()];
                row.extend(poolings.iter().map(|&p| {
                    look.get(metric, m, Some(p), None)
                        .map_or("-".into(), |s| pm(s.mean, s.sem))
                }));
                row
            })
            .collect();
        if metric == MetricId::PixelFlipping {
            if let Some(r) = file
                .references
                .iter()
                .find(|r| r.metric == metric && r.subject == GROUND_TRUTH)
            {
                let mut row = vec![GROUND_TRUTH.to_string()];
                row.extend(poolings.iter().map(|_| pm(r.mean, r.sem)));
                rows.push(row);
            }
        }
        let mut s = format!("\n## {title}\n\n");
        s.push_str(&md_table(&header, &rows));
        s.push('\n');
        s.push_str(&caption(metric, max_n(metric), extra));
        s
    };

    let all = &config.poolings;
    if on(MetricId::PixelFlipping) {
        out.push_str(&pooled_table(
            MetricId::PixelFlipping,
            all,
            "Pixel-flipping",
            "The ground-truth row flips annotated defect pixels first and is not ranked. ",
        ));
    }
    if on(MetricId::Irof) {
        out.push_str(&pooled_table(MetricId::Irof, all, "IROF", ""));
    }
    if on(MetricId::Sensitivity) {
        out.push_str(&pooled_table(
            MetricId::Sensitivity,
            all,
            "Average sensitivity",
            "The aggregate is not re-explained under perturbation. ",
        ));
    }
    if on(MetricId::Complexity) {
        out.push_str(&pooled_table(MetricId::Complexity, all, "Complexity", ""));
    }
    if on(MetricId::RocAuc) {
        out.push_str(&pooled_table(
            MetricId::RocAuc,
            all,
            "ROC-AUC",
            "Only images with an annotated defect are scored. ",
        ));
    }
    if on(MetricId::RelevanceMassAccuracy) {
        let unsigned: Vec<Pooling> = all.iter().copied().filter(|p| !p.is_signed()).collect();
        if !unsigned.is_empty() {
            out.push_str(&pooled_table(
                MetricId::RelevanceMassAccuracy,
                &unsigned,
                "Relevance mass accuracy",
                "Only sign-less poolings are included since the metric expects non-negative explanations. ",
            ));
        }
    }
    out
}

/// Means-only and Monte-Carlo rankings side by side in the final-ordering
/// layout.
pub fn ranking_markdown(kind: DefectKind, config_hash: &str, means: &RankingResult, mc: &RankingResult) -> String {
    let table = |title: &str, r: &RankingResult| {
        let header = vec![String::new(), title.to_string(), "Final MRR".to_string()];
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|row| {
                let score = match row.uncertainty {
                    Some(u) => pm(row.mrr, u),
                    None => format!("{:.3}", row.mrr),
                };
                vec![format!("{}.", row.position), row.method.display_name().to_string(), score]
            })
            .collect();
        md_table(&header, &rows)
    };
    format!(
        "# Final ordering of attribution methods: {kind}\n\n<!-- config_hash={config_hash} -->\n\n{}\n{}\nLeft: ranking of the score means. Right: {} Monte-Carlo repetitions on scores drawn from Normal(mean, sem); ± is the standard error of the reciprocal ranks.\n",
        table("Means only", means),
        table("Monte Carlo", mc),
        mc.repetitions
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::Preset;
    use crate::ranking::{rank_monte_carlo, rank_once, GroupAssignment, MetricTable};

    fn score(metric: MetricId, method: MethodId, pooling: Option<Pooling>, aug: Option<AugmentationKind>, mean: f64) -> MetricScore {
        MetricScore {
            metric,
            method,
            pooling,
            augmentation: aug,
            mean,
            sem: 0.01,
            n: 10,
            direction: metric.direction(),
        }
    }

    fn file() -> (RunConfig, ScoresFile) {
        let mut config = RunConfig::preset(Preset::Desk);
        config.methods = vec![MethodId::Gradients, MethodId::Occlusion, MethodId::MeanAggregate];
        let mut scores = Vec::new();
        for (i, &m) in config.methods.iter().enumerate() {
            for &p in &config.poolings {
                for metric in [MetricId::PixelFlipping, MetricId::Irof, MetricId::Sensitivity, MetricId::Complexity, MetricId::RocAuc] {
                    scores.push(score(metric, m, Some(p), None, 0.1 * i as f64));
                }
                if !p.is_signed() {
                    scores.push(score(MetricId::RelevanceMassAccuracy, m, Some(p), None, 0.5));
                }
            }
            if m != MethodId::MeanAggregate {
                for a in AugmentationKind::ALL {
                    if !(m == MethodId::Occlusion && a.is_equivariant()) {
                        scores.push(score(MetricId::Robustness, m, None, Some(a), 0.9));
                    }
                }
            }
        }
        let calibrations = AugmentationKind::ALL
            .iter()
            .map(|&kind| Calibration { kind, half_width: 0.2, endpoint_drop: 0.1, reached: true })
            .collect();
        let f = ScoresFile {
            config_hash: "abc".into(),
            kind: DefectKind::Discolor,
            images: 10,
            methods: config.methods.clone(),
            scores,
            references: vec![ReferenceScore { subject: GROUND_TRUTH.into(), metric: MetricId::PixelFlipping, mean: 0.2, sem: 0.01, n: 5 }],
            calibrations,
            skipped: 0,
        };
        (config, f)
    }

    #[test]
    fn metric_tables_have_dash_cells_and_a_reference_row() {
        let (config, f) = file();
        let md = metrics_markdown(&config, &f);
        assert!(md.contains("config_hash=abc"));
        assert!(md.contains("| | Brightness [-0.2, 0.2] | Hue [-0.2, 0.2] | Saturation [-0.2, 0.2] | Rotate [-0.2, 0.2] | Scale [0.8, 1.2] | Translate [-0.2, 0.2] |"));
        assert!(md.contains("| Occlusion | 0.900 ± 0.010 | 0.900 ± 0.010 | 0.900 ± 0.010 | - | - | - |"));
        assert!(md.contains("| mean | - | - | - | - | - | - |"));
        assert!(md.contains("| ground-truth | 0.200 ± 0.010 | 0.200 ± 0.010 | 0.200 ± 0.010 | 0.200 ± 0.010 |"));
        assert!(md.contains("| | max abs pooling | l2-norm pooling |"));
        for title in ["Pixel-flipping", "IROF", "Average sensitivity", "Complexity", "ROC-AUC", "Relevance mass accuracy"] {
            assert!(md.contains(&format!("## {title}\n")), "{title}");
        }
    }

    #[test]
    fn ranking_tables_and_csv() {
        let (config, f) = file();
        let table = MetricTable::from_scores(&f.scores, &config.methods, &GroupAssignment::standard()).unwrap();
        let means = rank_once(&table, 1).unwrap();
        let mc = rank_monte_carlo(&table, 10, 1).unwrap();
        let md = ranking_markdown(DefectKind::Discolor, "abc", &means, &mc);
        assert!(md.contains("| | Means only | Final MRR |"));
        assert!(md.contains("| | Monte Carlo | Final MRR |"));
        assert!(md.contains(" ± "));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_ranking_csv(&path, "abc", &mc).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=abc\nposition,method,mrr,uncertainty\n1,"));
        write_scores_csv(&path, &f).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("metric,method,pooling,augmentation,mean,sem,n,direction"));
        assert!(text.contains("pixel-flipping,ground-truth,,,0.2,0.01,5,higher-better"));
    }
}
