//! The six pipeline stages. Each stage reads its upstream artifacts, checks
//! them against the upstream manifest, writes its outputs and manifest, and
//! returns a short JSON summary.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{canonical_hash, RunConfig};
use super::evaluate::{
    calibrate, image_metrics, pooled_maps, robustness_metrics, segment, sensitivity_metrics, summarize_values,
    EvalItem, ImageOutcome,
};
use super::manifest::{
    check_upstream, digest_files, files_under, write_manifest, Layout, Stage, StageManifest, MANIFEST_VERSION,
};
use super::report::{
    metrics_markdown, ranking_markdown, write_csv, write_ranking_csv, write_scores_csv, write_text, RankingFile,
    ScoresFile,
};
use crate::data::io::{read_json, read_sidecar, write_json, write_png, write_sidecar, Precision};
use crate::data::dataset::load_item;
use crate::data::{build_dataset, load_dataset, load_manifest, DatasetConfig, DefectKind, Label, Split};
use crate::error::{Error, Result};
use crate::heatmap::{normalize_for_render, render as render_png, Heatmap};
use crate::method::MethodId;
use crate::metrics::MetricId;
use crate::nn::{accuracy, calibrate_batchnorm, checkpoint, merge_batchnorm, softmax, train as train_model, Model, TrainReport};
use crate::ranking::{rank_monte_carlo, rank_once, GroupAssignment, MetricTable};
use crate::rng::{derive_seed, tag};
use crate::segment::SegmentMap;

/// A configuration bound to an output directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    pub force: bool,
    pub hash: String,
}

impl Run {
    pub fn new(config: RunConfig, out: &Path, force: bool) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            hash: config.hash(),
            config,
            out: out.to_path_buf(),
            force,
        })
    }

    pub fn layout(&self, kind: DefectKind) -> Layout {
        Layout::new(&self.out, kind)
    }

    fn kind_index(kind: DefectKind) -> u64 {
        DefectKind::ALL.iter().position(|k| *k == kind).expect("known kind") as u64
    }

    pub fn stage_seed(&self, kind: DefectKind, stage: Stage) -> u64 {
        derive_seed(self.config.seed, tag::PIPELINE + 16 * Self::kind_index(kind) + stage as u64)
    }

    fn stage_config(&self, stage: Stage) -> Value {
        let c = &self.config;
        match stage {
            Stage::Generate => json!({ "data": c.data }),
            Stage::Train => json!({ "train": c.train }),
            Stage::Explain => json!({
                "methods": c.base_methods(),
                "explain": c.explain,
                "segmentation": c.segmentation,
                "images": c.evaluation.images,
            }),
            Stage::Evaluate => json!({
                "methods": c.methods,
                "poolings": c.poolings,
                "metrics": c.metrics,
                "evaluation": c.evaluation,
            }),
            Stage::Rank => json!({ "ranking": c.ranking }),
            Stage::Render => json!({ "render": c.render, "poolings": c.poolings, "methods": c.methods }),
        }
    }

    /// Hash of everything `stage` depends on, chained through its upstream
    /// stages.
    pub fn stage_key(&self, kind: DefectKind, stage: Stage) -> String {
        canonical_hash(&json!({
            "stage": stage,
            "kind": kind,
            "seed": self.config.seed,
            "config": self.stage_config(stage),
            "upstream": stage.upstream().map(|u| self.stage_key(kind, u)),
        }))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
    }

    fn write_config(&self) -> Result<()> {
        create_dir(&self.out)?;
        write_json(&self.out.join("config.json"), &self.config)
    }

    fn finish(
        &self,
        layout: &Layout,
        stage: Stage,
        inputs: BTreeMap<String, String>,
        outputs: &[PathBuf],
    ) -> Result<StageManifest> {
        let manifest = StageManifest {
            version: MANIFEST_VERSION,
            stage,
            kind: layout.kind,
            config_hash: self.hash.clone(),
            stage_key: self.stage_key(layout.kind, stage),
            inputs,
            outputs: digest_files(layout, outputs)?,
        };
        write_manifest(layout, &manifest)?;
        Ok(manifest)
    }

    /// Checks the upstream manifest and returns its outputs as inputs.
    fn begin(&self, layout: &Layout, stage: Stage) -> Result<BTreeMap<String, String>> {
        self.write_config()?;
        match stage.upstream() {
            Some(up) => check_upstream(layout, stage, &self.stage_key(layout.kind, up), self.force),
            None => Ok(BTreeMap::new()),
        }
    }

    pub fn run(&self, kind: DefectKind, stage: Stage) -> Result<Value> {
        log::info!("{kind}: {stage}");
        match stage {
            Stage::Generate => self.generate(kind),
            Stage::Train => self.train(kind),
            Stage::Explain => self.explain(kind),
            Stage::Evaluate => self.evaluate(kind),
            Stage::Rank => self.rank(kind),
            Stage::Render => self.render(kind),
        }
    }

    /// Every stage for every configured dataset kind.
    pub fn pipeline(&self) -> Result<Value> {
        let mut summaries = Vec::new();
        for &kind in &self.config.datasets {
            for stage in [Stage::Generate, Stage::Train, Stage::Explain, Stage::Evaluate, Stage::Rank, Stage::Render] {
                summaries.push(self.run(kind, stage)?);
            }
        }
        Ok(json!({ "config_hash": self.hash, "stages": summaries }))
    }

    pub fn generate(&self, kind: DefectKind) -> Result<Value> {
        let layout = self.layout(kind);
        self.begin(&layout, Stage::Generate)?;
        let dir = layout.dataset();
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let dcfg = DatasetConfig {
            n_items: self.config.data.n_items,
            seed: self.stage_seed(kind, Stage::Generate),
            kind,
            synth: self.config.data.synth.clone(),
            severity_range: self.config.data.severity_range,
        };
        let manifest = build_dataset(&dir, &dcfg)?;
        self.finish(&layout, Stage::Generate, BTreeMap::new(), &files_under(&dir)?)?;
        Ok(json!({
            "stage": "generate",
            "kind": kind,
            "config_hash": self.hash,
            "items": manifest.items.len(),
            "split_sizes": manifest.split_sizes,
        }))
    }

    pub fn train(&self, kind: DefectKind) -> Result<Value> {
        let layout = self.layout(kind);
        let inputs = self.begin(&layout, Stage::Train)?;
        let root = layout.dataset();
        let manifest = load_manifest(&root)?;
        let samples = |split| -> Result<Vec<_>> {
            Ok(load_dataset(&root, &manifest, Some(split))?.iter().map(|i| i.sample()).collect())
        };
        let (train_set, val_set, test_set) = (samples(Split::Train)?, samples(Split::Val)?, samples(Split::Test)?);
        let seed = self.stage_seed(kind, Stage::Train);
        let synth = &self.config.data.synth;
        let mut model = Model::micro_cnn(synth.height, synth.width, 2, derive_seed(seed, 1));
        let n_bn = self.config.train.bn_calibration_images.clamp(1, train_set.len());
        let bn_images: Vec<_> = train_set[..n_bn].iter().map(|s| s.image.clone()).collect();
        calibrate_batchnorm(&mut model, &bn_images)?;
        let cfg = self.config.train.to_train_config(derive_seed(seed, 2));
        let (model, report) = train_model(&model, &train_set, &val_set, &test_set, &cfg)?;
        let canonized = merge_batchnorm(&model)?;
        let canonized_accuracy = accuracy(&canonized, &test_set)?;
        let mut max_gap: f64 = 0.0;
        for s in &test_set {
            let a = softmax(&model.logits(&s.image)?);
            let b = softmax(&canonized.logits(&s.image)?);
            for (x, y) in a.iter().zip(&b) {
                max_gap = max_gap.max((x - y).abs());
            }
        }
        create_dir(&layout.model_dir())?;
        checkpoint::save(&model, &layout.checkpoint())?;
        checkpoint::save(&canonized, &layout.canonized())?;
        let summary = TrainSummary {
            config_hash: self.hash.clone(),
            kind,
            report,
            canonized_test_accuracy: canonized_accuracy,
            canonization_max_probability_gap: max_gap,
        };
        let report_path = layout.model_dir().join("train_report.json");
        write_json(&report_path, &summary)?;
        self.finish(
            &layout,
            Stage::Train,
            inputs,
            &[layout.checkpoint(), layout.canonized(), report_path],
        )?;
        Ok(json!({
            "stage": "train",
            "kind": kind,
            "config_hash": self.hash,
            "test_accuracy": summary.report.test_accuracy,
            "canonized_test_accuracy": canonized_accuracy,
        }))
    }

    fn load_model(&self, layout: &Layout) -> Result<Model> {
        let path = layout.canonized();
        if !path.exists() {
            return Err(Error::Missing {
                path,
                hint: "run `heatrank train` first".into(),
            });
        }
        checkpoint::load(&path)
    }

    pub fn explain(&self, kind: DefectKind) -> Result<Value> {
        let layout = self.layout(kind);
        let model = self.load_model(&layout)?;
        let inputs = self.begin(&layout, Stage::Explain)?;
        let root = layout.dataset();
        let manifest = load_manifest(&root)?;
        let test = load_dataset(&root, &manifest, Some(Split::Test))?;
        let predicted: Vec<(usize, f64)> = test
            .par_iter()
            .map(|item| {
                let p = softmax(&model.logits(&item.kernel.image)?);
                let c = crate::nn::model::argmax(&p);
                Ok((c, p[c]))
            })
            .collect::<Result<_>>()?;
        let correct: Vec<usize> = (0..test.len())
            .filter(|&i| predicted[i].0 == test[i].kernel.label.index())
            .collect();
        let chosen = balanced_selection(&correct, |i| test[i].kernel.label, self.config.evaluation.images);
        if chosen.is_empty() {
            return Err(Error::invalid("no correctly classified test images to explain"));
        }
        let dir = layout.heatmaps();
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        create_dir(&dir)?;
        let base = self.config.base_methods();
        let stage_seed = self.stage_seed(kind, Stage::Explain);
        let entries: Vec<IndexEntry> = self.pool()?.install(|| {
            chosen
                .par_iter()
                .map(|&i| -> Result<IndexEntry> {
                    let item = &test[i];
                    let k = &item.kernel;
                    let target = k.label.index();
                    let segments = segment(&self.config.segmentation, &k.image, &k.foreground)?;
                    let seed = derive_seed(stage_seed, item_number(&item.record.id)?);
                    let maps = super::evaluate::explain_methods(
                        &self.config.explain,
                        &base,
                        &model,
                        &k.image,
                        &k.foreground,
                        target,
                        Some(&segments),
                        seed,
                    )?;
                    let item_dir = dir.join(&item.record.id);
                    create_dir(&item_dir)?;
                    for h in &maps {
                        write_sidecar(&item_dir.join(format!("{}.f32", h.method)), &h.values, Precision::F32)?;
                    }
                    write_json(&item_dir.join("segments.json"), &segments)?;
                    Ok(IndexEntry {
                        id: item.record.id.clone(),
                        label: k.label,
                        target,
                        probability: predicted[i].1,
                        segments: segments.foreground_segments(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let index = HeatmapIndex {
            config_hash: self.hash.clone(),
            kind,
            precision: "f32".into(),
            methods: base,
            correct: correct.len(),
            test_items: test.len(),
            items: entries,
        };
        write_json(&dir.join("index.json"), &index)?;
        let mut inputs = inputs;
        inputs.extend(digest_files(&layout, &[layout.canonized()])?);
        self.finish(&layout, Stage::Explain, inputs, &files_under(&dir)?)?;
        Ok(json!({
            "stage": "explain",
            "kind": kind,
            "config_hash": self.hash,
            "images": index.items.len(),
            "methods": index.methods,
            "correct_test_images": index.correct,
        }))
    }

    /// Evaluation items and their stored heatmaps, in index order.
    fn load_explained(&self, layout: &Layout, stage: Stage) -> Result<(HeatmapIndex, Vec<(EvalItem, Vec<Heatmap>)>)> {
        let dir = layout.heatmaps();
        let index: HeatmapIndex = read_json(&dir.join("index.json"))?;
        if index.methods != self.config.base_methods() {
            return Err(Error::Stale {
                path: dir.join("index.json"),
                reason: "heatmaps were computed for a different method list; re-run `heatrank explain`".into(),
            });
        }
        let root = layout.dataset();
        let manifest = load_manifest(&root)?;
        let records: HashMap<&str, _> = manifest.items.iter().map(|r| (r.id.as_str(), r)).collect();
        let stage_seed = self.stage_seed(layout.kind, stage);
        let items = index
            .items
            .par_iter()
            .map(|e| -> Result<(EvalItem, Vec<Heatmap>)> {
                let record = records
                    .get(e.id.as_str())
                    .ok_or_else(|| Error::corrupt(dir.join("index.json"), format!("unknown item {}", e.id)))?;
                let item = load_item(&root, record)?;
                let item_dir = dir.join(&e.id);
                let segments: SegmentMap = read_json(&item_dir.join("segments.json"))?;
                let k = item.kernel;
                let maps = index
                    .methods
                    .iter()
                    .map(|&m| {
                        let values = read_sidecar(&item_dir.join(format!("{m}.f32")))?;
                        Heatmap::new(values, m, e.target, &k.foreground)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((
                    EvalItem {
                        id: e.id.clone(),
                        image: k.image,
                        foreground: k.foreground,
                        annotation: k.annotation,
                        target: e.target,
                        segments,
                        seed: derive_seed(stage_seed, item_number(&e.id)?),
                    },
                    maps,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((index, items))
    }

    pub fn evaluate(&self, kind: DefectKind) -> Result<Value> {
        let layout = self.layout(kind);
        let model = self.load_model(&layout)?;
        let mut inputs = self.begin(&layout, Stage::Evaluate)?;
        inputs.extend(digest_files(&layout, &[layout.canonized()])?);
        let (_, loaded) = self.load_explained(&layout, Stage::Evaluate)?;
        let config = &self.config;
        let on = |m: MetricId| config.metrics.contains(&m);
        let items: Vec<&EvalItem> = loaded.iter().map(|(i, _)| i).collect();
        let calibrations = if on(MetricId::Robustness) {
            let owned: Vec<EvalItem> = items.iter().map(|i| (*i).clone()).collect();
            calibrate(config, &model, &owned)?
        } else {
            Vec::new()
        };
        let n_sens = config.evaluation.sensitivity.images;
        let n_rob = config.evaluation.robustness.images;
        let timers: [AtomicU64; 3] = Default::default();
        let timed = |k: usize, start: Instant| timers[k].fetch_add(start.elapsed().as_millis() as u64, Ordering::Relaxed);
        let outcomes: Vec<ImageOutcome> = self.pool()?.install(|| {
            loaded
                .par_iter()
                .enumerate()
                .map(|(i, (item, maps))| -> Result<ImageOutcome> {
                    let start = Instant::now();
                    let pooled = pooled_maps(config, maps, derive_seed(item.seed, 1))?;
                    let mut out = image_metrics(config, &model, item, &pooled)?;
                    timed(0, start);
                    if on(MetricId::Sensitivity) && i < n_sens {
                        let start = Instant::now();
                        out.extend(sensitivity_metrics(config, &model, item)?);
                        timed(1, start);
                    }
                    if on(MetricId::Robustness) && i < n_rob {
                        let start = Instant::now();
                        out.extend(robustness_metrics(config, &model, item, &calibrations)?);
                        timed(2, start);
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let [per_image, sensitivity, robustness] = timers.map(|t| t.into_inner() as f64 / 1000.0);
        log::info!(
            "{kind}: per-image metrics {per_image:.1}s, sensitivity {sensitivity:.1}s, robustness {robustness:.1}s (summed over workers)"
        );
        let mut all = ImageOutcome::default();
        for o in outcomes {
            all.extend(o);
        }
        let (scores, references) = summarize_values(config, &all.values);
        let file = ScoresFile {
            config_hash: self.hash.clone(),
            kind,
            images: items.len(),
            methods: config.methods.clone(),
            scores,
            references,
            calibrations,
            skipped: all.skips.len(),
        };
        let dir = layout.metrics();
        create_dir(&dir)?;
        let paths = [
            dir.join("scores.json"),
            dir.join("scores.csv"),
            dir.join("per_image.csv"),
            dir.join("skipped.csv"),
            dir.join("tables.md"),
        ];
        write_json(&paths[0], &file)?;
        write_scores_csv(&paths[1], &file)?;
        write_csv(
            &paths[2],
            &self.hash,
            &["item", "metric", "subject", "pooling", "augmentation", "value"],
            &all.values,
        )?;
        write_csv(
            &paths[3],
            &self.hash,
            &["item", "metric", "subject", "pooling", "augmentation", "reason"],
            &all.skips,
        )?;
        write_text(&paths[4], &metrics_markdown(config, &file))?;
        self.finish(&layout, Stage::Evaluate, inputs, &paths)?;
        Ok(json!({
            "stage": "evaluate",
            "kind": kind,
            "config_hash": self.hash,
            "images": file.images,
            "scores": file.scores.len(),
            "values": all.values.len(),
            "skipped": file.skipped,
        }))
    }

    pub fn rank(&self, kind: DefectKind) -> Result<Value> {
        let layout = self.layout(kind);
        let inputs = self.begin(&layout, Stage::Rank)?;
        let scores: ScoresFile = read_json(&layout.metrics().join("scores.json"))?;
        let groups = present_groups(&self.config.ranking.groups, &scores)?;
        let table = MetricTable::from_scores(&scores.scores, &scores.methods, &groups)?;
        let seed = self.stage_seed(kind, Stage::Rank);
        let means = rank_once(&table, seed)?;
        let mc = rank_monte_carlo(&table, self.config.ranking.monte_carlo, seed)?;
        let dir = layout.ranking();
        create_dir(&dir)?;
        let paths = [
            dir.join("means-only.json"),
            dir.join("means-only.csv"),
            dir.join("monte-carlo.json"),
            dir.join("monte-carlo.csv"),
            dir.join("table.json"),
            dir.join("ranking.md"),
        ];
        for (json_path, csv_path, result) in [(&paths[0], &paths[1], &means), (&paths[2], &paths[3], &mc)] {
            write_json(
                json_path,
                &RankingFile {
                    config_hash: self.hash.clone(),
                    kind,
                    result: result.clone(),
                },
            )?;
            write_ranking_csv(csv_path, &self.hash, result)?;
        }
        write_json(&paths[4], &json!({ "config_hash": self.hash, "table": table }))?;
        write_text(&paths[5], &ranking_markdown(kind, &self.hash, &means, &mc))?;
        self.finish(&layout, Stage::Rank, inputs, &paths)?;
        Ok(json!({
            "stage": "rank",
            "kind": kind,
            "config_hash": self.hash,
            "means_only": means.order(),
            "monte_carlo": mc.order(),
        }))
    }

    pub fn render(&self, kind: DefectKind) -> Result<Value> {
        let layout = self.layout(kind);
        let inputs = self.begin(&layout, Stage::Render)?;
        let (_, loaded) = self.load_explained(&layout, Stage::Render)?;
        let dir = layout.render();
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let spec = self.config.render.normalization;
        let spec_text = serde_json::to_string(&spec)?;
        let mut written = Vec::new();
        for (item, maps) in loaded.iter().take(self.config.render.images) {
            let item_dir = dir.join(&item.id);
            create_dir(&item_dir)?;
            let (_, h, w) = item.image.dims();
            let input = item_dir.join("input.png");
            write_png(
                &input,
                w,
                h,
                3,
                &crate::data::io::to_rgb8(&item.image),
                &[("config_hash", &self.hash), ("item", &item.id)],
            )?;
            written.push(input);
            let pooled = pooled_maps(&self.config, maps, derive_seed(item.seed, 1))?;
            for (j, pooling) in self.config.poolings.iter().enumerate() {
                let column: Vec<_> = pooled.iter().map(|(_, m)| m[j].clone()).collect();
                let normalized = normalize_for_render(&column, spec)?;
                for ((method, _), map) in pooled.iter().zip(&normalized) {
                    let path = item_dir.join(format!("{method}.{pooling}.png"));
                    render_png(
                        map,
                        &path,
                        &[
                            ("config_hash", &self.hash),
                            ("item", &item.id),
                            ("method", method.id()),
                            ("pooling", pooling.id()),
                            ("normalization", &spec_text),
                        ],
                    )?;
                    written.push(path);
                }
            }
        }
        self.finish(&layout, Stage::Render, inputs, &written)?;
        Ok(json!({
            "stage": "render",
            "kind": kind,
            "config_hash": self.hash,
            "images": written.len(),
        }))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn item_number(id: &str) -> Result<u64> {
    id.parse()
        .map_err(|_| Error::invalid(format!("item id `{id}` is not numeric")))
}

/// Up to `n` indices, half of each label where possible, in input order.
pub fn balanced_selection(candidates: &[usize], label: impl Fn(usize) -> Label, n: usize) -> Vec<usize> {
    let defect: Vec<usize> = candidates.iter().copied().filter(|&i| label(i) == Label::Defect).collect();
    let healthy: Vec<usize> = candidates.iter().copied().filter(|&i| label(i) == Label::Healthy).collect();
    let mut take_d = n.div_ceil(2).min(defect.len());
    let take_h = (n - take_d).min(healthy.len());
    take_d = (n - take_h).min(defect.len());
    let mut chosen: Vec<usize> = defect[..take_d].iter().chain(&healthy[..take_h]).copied().collect();
    chosen.sort_unstable();
    chosen
}

/// The configured groups restricted to those with at least one column in
/// `scores`; an empty group would otherwise make the ranking fail when a
/// metric subset is selected.
fn present_groups(groups: &GroupAssignment, scores: &ScoresFile) -> Result<GroupAssignment> {
    let columns: Vec<String> = scores.scores.iter().map(|s| s.column()).collect();
    let kept: BTreeMap<String, Vec<String>> = groups
        .0
        .iter()
        .filter(|(_, sel)| {
            columns
                .iter()
                .any(|c| sel.iter().any(|s| c == s || c.starts_with(&format!("{s}/"))))
        })
        .map(|(g, s)| (g.clone(), s.clone()))
        .collect();
    for g in groups.0.keys().filter(|g| !kept.contains_key(*g)) {
        log::warn!("metric group `{g}` has no scores and is left out of the ranking");
    }
    if kept.is_empty() {
        return Err(Error::invalid("no metric scores to rank"));
    }
    Ok(GroupAssignment(kept))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub kind: DefectKind,
    pub report: TrainReport,
    pub canonized_test_accuracy: f64,
    pub canonization_max_probability_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub label: Label,
    pub target: usize,
    pub probability: f64,
    pub segments: usize,
}

/// Contents of `heatmaps/index.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapIndex {
    pub config_hash: String,
    pub kind: DefectKind,
    pub precision: String,
    pub methods: Vec<MethodId>,
    pub correct: usize,
    pub test_items: usize,
    pub items: Vec<IndexEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_selection_fills_from_the_other_class() {
        let labels = [Label::Defect, Label::Healthy, Label::Defect, Label::Defect, Label::Defect];
        let all: Vec<usize> = (0..5).collect();
        assert_eq!(balanced_selection(&all, |i| labels[i], 2), vec![0, 1]);
        assert_eq!(balanced_selection(&all, |i| labels[i], 4), vec![0, 1, 2, 3]);
        assert_eq!(balanced_selection(&all, |i| labels[i], 9), vec![0, 1, 2, 3, 4]);
    }
}
