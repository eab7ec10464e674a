//! Experiment runner: split, standardize, train with early stopping, report.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::batching::{self, BatchMode};
use crate::config::{DataSource, LossKind, TrainConfig};
use crate::dataio::{self, Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::{multilevel_report, EarlyStopper, SilhouetteReport, StopDecision};
use crate::hierarchy::{LabelPath, LabelTree, RankMap};
use crate::projection::{Checkpoint, FeatureStats, Optimizer, ProjectionModel};
use crate::quadruplet_loss::{mine_quadruplets, quad_backward, quad_forward};
use crate::rank_loss::{rbl_backward, rbl_forward};
use crate::rng::{sub_seed, Stream};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SPLITS_FILE: &str = "splits.csv";
pub const DATA_FILE: &str = "data.csv";
pub const REPORT_FILE: &str = "report.json";

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    pub sil_per_level: Vec<Option<f64>>,
    #[serde(rename = "avSil")]
    pub av_sil: Option<f64>,
    /// Mean training loss over the epoch's batches; `None` at epoch 0, for
    /// evaluation-only lines and when every batch was unusable.
    pub loss: Option<f64>,
}

impl MetricsRecord {
    fn new(epoch: usize, split: Split, report: &SilhouetteReport, loss: Option<f64>) -> Self {
        MetricsRecord {
            epoch,
            split,
            sil_per_level: report.sil_per_level.clone(),
            av_sil: report.av_sil,
            loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Untrained projection.
    pub initial: BTreeMap<Split, SilhouetteReport>,
    /// Best checkpoint.
    #[serde(rename = "final")]
    pub final_reports: BTreeMap<Split, SilhouetteReport>,
    /// Standardized input features without any projection.
    pub raw_features: BTreeMap<Split, SilhouetteReport>,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRecord>,
    pub report: RunReport,
    pub checkpoint: Checkpoint,
    pub dataset: Dataset,
}

/// Silhouette report of `rows` after standardizing with `stats` and, unless
/// `model` is `None`, projecting.
pub fn evaluate_rows(
    model: Option<&ProjectionModel>,
    stats: &FeatureStats,
    dataset: &Dataset,
    rows: &[usize],
    depth: usize,
) -> Result<SilhouetteReport> {
    let x = stats.standardize(dataset.select_features(rows).view())?;
    let labels: Vec<LabelPath> = rows.iter().map(|&k| dataset.labels[k].clone()).collect();
    let x = match model {
        Some(m) => m.embed(x.view())?,
        None => x,
    };
    multilevel_report(x.view(), &labels, depth)
}

/// Evaluates a checkpoint on one split of a dataset (all rows when `split`
/// is `None`). With `raw_features` the projection is skipped.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    split: Option<Split>,
    raw_features: bool,
) -> Result<SilhouetteReport> {
    if checkpoint.d_in != dataset.dim() {
        return Err(Error::Shape(format!(
            "checkpoint expects {} features, dataset has {}",
            checkpoint.d_in,
            dataset.dim()
        )));
    }
    let (model, stats) = checkpoint.clone().into_parts()?;
    let rows = match split {
        Some(s) => dataset.indices(s),
        None => (0..dataset.len()).collect(),
    };
    if rows.len() < 2 {
        return Err(Error::UndefinedSilhouette(format!(
            "split {} has {} rows",
            split.map_or("all", Split::as_str),
            rows.len()
        )));
    }
    evaluate_rows(
        (!raw_features).then_some(&model),
        &stats,
        dataset,
        &rows,
        dataset.depth(),
    )
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Csv(path) => Dataset::load_csv(path),
        DataSource::Synth(spec) => spec.generate(),
    }
}

struct Context<'a> {
    cfg: &'a TrainConfig,
    dataset: &'a Dataset,
    stats: FeatureStats,
    rank_map: RankMap,
    train_rows: Vec<usize>,
    depth: usize,
}

impl Context<'_> {
    fn report(
        &self,
        model: Option<&ProjectionModel>,
        split: Split,
    ) -> Result<Option<SilhouetteReport>> {
        let rows = self.dataset.indices(split);
        if rows.len() < 2 {
            return Ok(None);
        }
        evaluate_rows(model, &self.stats, self.dataset, &rows, self.depth).map(Some)
    }

    fn eval_splits(&self) -> Vec<Split> {
        [Split::Test, Split::AltTest]
            .into_iter()
            .filter(|&s| self.dataset.indices(s).len() >= 2)
            .collect()
    }

    /// Loss and embedding gradient of one batch, `None` when the batch holds
    /// nothing the loss can use.
    fn batch_loss(
        &self,
        rows: &[usize],
        embeddings: &Array2<f64>,
        mining_seed: u64,
    ) -> Result<Option<(f64, Array2<f64>)>> {
        let labels: Vec<&LabelPath> = rows.iter().map(|&k| &self.dataset.labels[k]).collect();
        match self.cfg.loss {
            LossKind::Rbl => {
                let ranks = self.rank_map.batch_ranks(&labels)?;
                match rbl_forward(embeddings.view(), &ranks) {
                    Ok((loss, table)) => {
                        let grad = rbl_backward(&table, embeddings.view())?;
                        Ok(Some((loss, grad)))
                    }
                    Err(Error::NoIncludedPairs) => Ok(None),
                    Err(e) => Err(e),
                }
            }
            LossKind::Quadruplet => {
                let quads = mine_quadruplets(&labels, mining_seed);
                if quads.is_empty() {
                    return Ok(None);
                }
                let loss = quad_forward(embeddings.view(), &quads, self.cfg.margins)?;
                let grad = quad_backward(embeddings.view(), &quads, self.cfg.margins)?;
                Ok(Some((loss, grad)))
            }
        }
    }

    fn plan(&self, epoch: usize) -> Result<batching::BatchPlan> {
        let seed = sub_seed(self.cfg.seed, Stream::Batches, epoch as u64);
        match self.cfg.batch_mode {
            BatchMode::Balanced => batching::plan_balanced(
                &self.train_rows,
                &self.dataset.labels,
                &self.rank_map,
                self.cfg.batch_size,
                seed,
            ),
            BatchMode::Unconstrained => {
                batching::plan_unconstrained(&self.train_rows, self.cfg.batch_size, seed)
            }
        }
    }
}

/// Runs one configured experiment. Artifacts are written when the config
/// names an output directory.
pub fn run(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut dataset = load_dataset(&cfg.data)?;
    if dataset.dim() < 1 {
        return Err(Error::Config("dataset has no feature columns".into()));
    }
    if cfg.holdout_per_coarse > 0 {
        dataio::hold_out_fine_classes(&mut dataset, cfg.holdout_per_coarse)?;
    }
    dataio::split(&mut dataset, sub_seed(cfg.seed, Stream::Split, 0))?;
    let outcome = train_on(cfg, dataset)?;
    if let Some(dir) = &cfg.output_dir {
        write_artifacts(dir, cfg, &outcome)?;
    }
    Ok(outcome)
}

/// Trains on a dataset whose splits are already assigned.
pub fn train_on(cfg: &TrainConfig, dataset: Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_rows = dataset.indices(Split::Train);
    if train_rows.len() < 2 {
        return Err(Error::Config("training split needs at least 2 rows".into()));
    }
    let stats = FeatureStats::fit(dataset.select_features(&train_rows).view())?;
    let tree = LabelTree::build(&dataset.labels)?;
    let rank_map = RankMap::build(&tree, train_rows.iter().map(|&k| &dataset.labels[k]))?;
    let ctx = Context {
        cfg,
        dataset: &dataset,
        stats,
        rank_map,
        train_rows,
        depth: tree.height(),
    };

    let mut model = ProjectionModel::init(
        sub_seed(cfg.seed, Stream::Init, 0),
        dataset.dim(),
        cfg.d_out,
    )?;
    let mut optimizer = Optimizer::new(cfg.optimizer, &model);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut metrics = Vec::new();
    let mut initial = BTreeMap::new();
    let mut raw_features = BTreeMap::new();

    let val = ctx
        .report(Some(&model), Split::Val)?
        .ok_or_else(|| Error::Config("validation split needs at least 2 rows".into()))?;
    metrics.push(MetricsRecord::new(0, Split::Val, &val, None));
    stopper.update(0, val.av_sil.unwrap_or(f64::NAN));
    for split in ctx.eval_splits() {
        let r = ctx.report(Some(&model), split)?.unwrap();
        metrics.push(MetricsRecord::new(0, split, &r, None));
        initial.insert(split, r);
        raw_features.insert(split, ctx.report(None, split)?.unwrap());
    }

    let mut best = model.clone();
    let mut epochs_run = 0;
    let mut stopped_early = false;
    let mut skipped = 0;
    for epoch in 1..=cfg.max_epochs {
        let plan = ctx.plan(epoch)?;
        let mut loss_sum = 0.0;
        let mut used = 0usize;
        for (b, rows) in plan.batches.iter().enumerate() {
            let x = ctx
                .stats
                .standardize(dataset.select_features(rows).view())?;
            let (e, cache) = model.forward(x.view())?;
            let mining_seed = sub_seed(cfg.seed, Stream::Mining, ((epoch as u64) << 32) | b as u64);
            let Some((loss, grad_e)) = ctx.batch_loss(rows, &e, mining_seed)? else {
                skipped += 1;
                continue;
            };
            let grads = model.backward(&cache, grad_e.view())?;
            optimizer.step(&mut model, &grads)?;
            loss_sum += loss;
            used += 1;
        }
        epochs_run = epoch;
        let loss = (used > 0).then(|| loss_sum / used as f64);
        let val = ctx.report(Some(&model), Split::Val)?.unwrap();
        metrics.push(MetricsRecord::new(epoch, Split::Val, &val, loss));
        match stopper.update(epoch, val.av_sil.unwrap_or(f64::NAN)) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Stale => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    let best_epoch = stopper.best_epoch().unwrap_or(0);
    let mut final_reports = BTreeMap::new();
    for split in ctx.eval_splits() {
        let r = ctx.report(Some(&best), split)?.unwrap();
        metrics.push(MetricsRecord::new(best_epoch, split, &r, None));
        final_reports.insert(split, r);
    }
    let checkpoint = Checkpoint::new(&best, &ctx.stats);
    Ok(TrainOutcome {
        metrics,
        report: RunReport {
            best_epoch,
            epochs_run,
            stopped_early,
            initial,
            final_reports,
            raw_features,
            skipped_batches: skipped,
        },
        checkpoint,
        dataset,
    })
}

pub fn write_metrics<W: Write>(mut out: W, metrics: &[MetricsRecord]) -> Result<()> {
    for m in metrics {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io(METRICS_FILE, e))?;
    }
    Ok(())
}

fn write_artifacts(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(METRICS_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_metrics(&mut w, &outcome.metrics)?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    outcome.dataset.save_splits(&dir.join(SPLITS_FILE))?;
    if matches!(cfg.data, DataSource::Synth(_)) {
        outcome.dataset.save_csv(&dir.join(DATA_FILE))?;
    }
    let path = dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&outcome.report)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
