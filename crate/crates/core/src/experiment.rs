//! Experiment harnesses: benchmark runs, training-set contamination sweeps,
//! deletion robustness with and without augmentation, and the segment-count
//! ablation. Runs inside an experiment are independent and execute in
//! parallel; every run derives its own seed, so tables reproduce exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::data::{
    self, apply_type2_deletion, augment_training_set, build_benchmark, load_ucr_dataset,
    synthesize_dataset, znormalize_dataset, Dataset, Label, SynthConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{aupr, auc, MetricResult, RunMetrics};
use crate::score::{localize_shapelets, score_segments, score_series, Aggregation};
use crate::train::{surrogate_train, TrainedModel, TrainingConfig};

/// Where the series come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSpec {
    /// Cyclically shifted sine periods with injected bump anomalies. The
    /// configured seed is replaced by each run's seed.
    Synthetic { synth: SynthConfig },
    /// Delimited label-first files; training pool and evaluation set loaded
    /// separately. `normal_class = None` picks the training file's major class.
    Ucr {
        train_path: PathBuf,
        test_path: PathBuf,
        normal_class: Option<i64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    pub train: TrainingConfig,
    /// Independent runs; the reference protocol averages twenty, desk scale five.
    pub runs: usize,
    /// Z-normalize every series at load time.
    pub normalize: bool,
    /// Anomalies injected into the training set (benchmark runs).
    pub anomaly_count: usize,
    /// Contamination sweep.
    pub anomaly_counts: Vec<usize>,
    /// Test-length ratios for the deletion experiment.
    pub deletion_ratios: Vec<f64>,
    /// Deletion fractions used when augmenting the training set.
    pub augment_fractions: Vec<f64>,
    pub augment_copies: usize,
    /// Segment counts for the ablation.
    pub segment_counts: Vec<usize>,
    pub aggregation: Aggregation,
    /// Quantile of training energies used for shapelet localization.
    pub shapelet_quantile: f64,
    /// Jaccard overlap that counts as a localization hit (synthetic runs).
    pub localization_jaccard: f64,
}

impl ExperimentConfig {
    pub fn new(data: DataSpec, train: TrainingConfig) -> Self {
        ExperimentConfig {
            data,
            train,
            runs: 5,
            normalize: true,
            anomaly_count: 0,
            anomaly_counts: vec![0],
            deletion_ratios: vec![1.0, 0.95, 0.90],
            augment_fractions: vec![0.05, 0.10],
            augment_copies: 1,
            segment_counts: vec![1, 2, 3, 4],
            aggregation: Aggregation::Max,
            shapelet_quantile: 0.95,
            localization_jaccard: 0.3,
        }
    }

    fn run_seed(&self, run: usize) -> u64 {
        self.train.seed.wrapping_add(run as u64)
    }
}

/// The training pool and evaluation set for one run.
struct RunData {
    pool: Dataset,
    eval: Dataset,
}

fn load_run_data(config: &ExperimentConfig, run_seed: u64) -> Result<RunData> {
    match &config.data {
        DataSpec::Synthetic { synth } => {
            let ds = synthesize_dataset(&SynthConfig {
                seed: run_seed,
                ..synth.clone()
            })?;
            let ds = if config.normalize { znormalize_dataset(&ds) } else { ds };
            Ok(RunData {
                pool: ds.clone(),
                eval: ds,
            })
        }
        DataSpec::Ucr {
            train_path,
            test_path,
            normal_class,
        } => {
            let normal_class = match normal_class {
                Some(c) => *c,
                None => data::detect_major_class(train_path)?,
            };
            let mut pool = load_ucr_dataset(train_path, normal_class)?;
            let mut eval = load_ucr_dataset(test_path, normal_class)?;
            if config.normalize {
                pool = znormalize_dataset(&pool);
                eval = znormalize_dataset(&eval);
            }
            Ok(RunData { pool, eval })
        }
    }
}

fn metrics_for(model: &TrainedModel, eval: &Dataset, aggregation: Aggregation, seed: u64) -> Result<RunMetrics> {
    let mut scores = Vec::with_capacity(eval.len());
    let mut labels = Vec::with_capacity(eval.len());
    for series in &eval.series {
        let segment_scores = score_segments(series, model)?;
        scores.push(score_series(&segment_scores, aggregation)?);
        labels.push(series.label.ok_or_else(|| {
            Error::Argument(format!("series '{}' has no label for evaluation", series.id))
        })?);
    }
    Ok(RunMetrics {
        seed,
        auc: auc(&scores, &labels)?,
        aupr: aupr(&scores, &labels)?,
    })
}

/// One train-and-score run; contamination and augmentation are applied to
/// the training pool before training.
fn single_run(
    config: &ExperimentConfig,
    run: usize,
    anomaly_count: usize,
    augment: bool,
    deletion_ratio: f64,
    train_override: &TrainingConfig,
) -> Result<RunMetrics> {
    let run_seed = config.run_seed(run);
    let data = load_run_data(config, run_seed)?;
    let (mut train_set, _) = build_benchmark(&data.pool, anomaly_count, run_seed)?;
    if augment {
        train_set = augment_training_set(
            &train_set,
            &config.augment_fractions,
            config.augment_copies,
            run_seed ^ 0x4155_47,
        )?;
    }
    let train_cfg = TrainingConfig {
        seed: run_seed,
        ..train_override.clone()
    };
    let outcome = surrogate_train(&train_set, &train_cfg)?;

    let eval = if deletion_ratio < 1.0 {
        let drop = 1.0 - deletion_ratio;
        let series = data
            .eval
            .series
            .iter()
            .enumerate()
            .map(|(i, s)| apply_type2_deletion(s, drop, run_seed ^ (i as u64) << 8))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(data.eval.name.clone(), series, data.eval.normal_class)?
    } else {
        data.eval
    };
    metrics_for(&outcome.model, &eval, config.aggregation, run_seed)
}

fn collect_runs(
    config: &ExperimentConfig,
    anomaly_count: usize,
    augment: bool,
    deletion_ratio: f64,
    train_override: &TrainingConfig,
) -> Result<MetricResult> {
    if config.runs == 0 {
        return Err(Error::Argument("experiment needs at least one run".into()));
    }
    let runs: Vec<Result<RunMetrics>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            single_run(config, run, anomaly_count, augment, deletion_ratio, train_override)
                .map_err(|e| Error::Config(format!("run with seed {} failed: {e}", config.run_seed(run))))
        })
        .collect();
    MetricResult::from_runs(runs.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Train/score/measure over `runs` seeds with the configured contamination.
pub fn run_benchmark(config: &ExperimentConfig) -> Result<MetricResult> {
    collect_runs(config, config.anomaly_count, false, 1.0, &config.train)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationRow {
    pub anomaly_count: usize,
    pub metrics: MetricResult,
    /// `(clean − contaminated) / clean` on the mean AUC.
    pub relative_loss: f64,
}

/// Sweep injected training anomalies and report the loss against the clean
/// run.
pub fn run_contamination(config: &ExperimentConfig) -> Result<Vec<ContaminationRow>> {
    let mut counts = config.anomaly_counts.clone();
    if !counts.contains(&0) {
        counts.insert(0, 0);
    }
    counts.sort_unstable();
    counts.dedup();
    let mut rows = Vec::new();
    let mut clean_auc = None;
    for count in counts {
        let metrics = collect_runs(config, count, false, 1.0, &config.train)?;
        let clean = *clean_auc.get_or_insert(metrics.auc_mean);
        rows.push(ContaminationRow {
            anomaly_count: count,
            relative_loss: if clean > 0.0 { (clean - metrics.auc_mean) / clean } else { 0.0 },
            metrics,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionRow {
    pub ratio: f64,
    pub augmented: bool,
    pub metrics: MetricResult,
}

/// Evaluate at shortened test lengths, with and without deletion-augmented
/// training.
pub fn run_deletion(config: &ExperimentConfig) -> Result<Vec<DeletionRow>> {
    let mut rows = Vec::new();
    for &augmented in &[false, true] {
        for &ratio in &config.deletion_ratios {
            if !(0.0 < ratio && ratio <= 1.0) {
                return Err(Error::Argument(format!("deletion ratio {ratio} outside (0,1]")));
            }
            let metrics = collect_runs(config, config.anomaly_count, augmented, ratio, &config.train)?;
            rows.push(DeletionRow {
                ratio,
                augmented,
                metrics,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub num_segments: usize,
    pub metrics: MetricResult,
}

/// Fix everything except the segment count; `M = 1` is the unsegmented
/// pipeline.
pub fn run_ablation_segments(config: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    config
        .segment_counts
        .iter()
        .map(|&m| {
            let train = TrainingConfig {
                num_segments: Some(m),
                ..config.train.clone()
            };
            Ok(AblationRow {
                num_segments: m,
                metrics: collect_runs(config, config.anomaly_count, false, 1.0, &train)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOutcome {
    pub metrics: MetricResult,
    /// Fraction of anomalous series where some returned shapelet overlaps
    /// the injected span with Jaccard above the configured threshold.
    pub localization_hit_rate: f64,
    /// Same, counting only each series' top-scoring shapelet.
    pub top_shapelet_hit_rate: f64,
    pub anomalous_series: usize,
}

fn interval_jaccard(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter_lo = a.0.max(b.0);
    let inter_hi = a.1.min(b.1);
    let inter = inter_hi.saturating_sub(inter_lo) + usize::from(inter_hi >= inter_lo);
    let union = (a.1 - a.0 + 1) + (b.1 - b.0 + 1) - inter;
    inter as f64 / union as f64
}

/// The synthetic separation experiment: benchmark metrics plus localization
/// overlap against the injected anomaly span.
pub fn run_synthetic(config: &ExperimentConfig) -> Result<SyntheticOutcome> {
    let synth = match &config.data {
        DataSpec::Synthetic { synth } => synth.clone(),
        _ => return Err(Error::Argument("run_synthetic needs a synthetic data spec".into())),
    };
    // 1-based inclusive injected span
    let injected = (synth.anomaly_span.0 + 1, synth.anomaly_span.0 + synth.anomaly_span.1);

    let outcomes: Vec<Result<(RunMetrics, usize, usize, usize)>> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = config.run_seed(run);
            let data = load_run_data(config, run_seed)?;
            let (train_set, _) = build_benchmark(&data.pool, config.anomaly_count, run_seed)?;
            let train_cfg = TrainingConfig {
                seed: run_seed,
                ..config.train.clone()
            };
            let outcome = surrogate_train(&train_set, &train_cfg)?;
            let metrics = metrics_for(&outcome.model, &data.eval, config.aggregation, run_seed)?;

            let mut any_hits = 0usize;
            let mut top_hits = 0usize;
            let mut total = 0usize;
            for series in data.eval.series.iter().filter(|s| s.label == Some(Label::Anomaly)) {
                total += 1;
                let shapelets =
                    localize_shapelets(series, &outcome.model, config.shapelet_quantile)?;
                if shapelets
                    .iter()
                    .any(|s| interval_jaccard(s.span, injected) > config.localization_jaccard)
                {
                    any_hits += 1;
                }
                if let Some(top) = shapelets.first() {
                    if interval_jaccard(top.span, injected) > config.localization_jaccard {
                        top_hits += 1;
                    }
                }
            }
            Ok((metrics, any_hits, top_hits, total))
        })
        .collect();

    let mut per_run = Vec::new();
    let mut any_hits = 0usize;
    let mut top_hits = 0usize;
    let mut total = 0usize;
    for o in outcomes {
        let (m, a, t, n) = o?;
        per_run.push(m);
        any_hits += a;
        top_hits += t;
        total += n;
    }
    Ok(SyntheticOutcome {
        metrics: MetricResult::from_runs(per_run)?,
        localization_hit_rate: if total == 0 { 0.0 } else { any_hits as f64 / total as f64 },
        top_shapelet_hit_rate: if total == 0 { 0.0 } else { top_hits as f64 / total as f64 },
        anomalous_series: total,
    })
}

/// Human-readable results table.
pub fn markdown_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&format!("| {} |\n", headers.join(" | ")));
    out.push_str(&format!("|{}\n", "---|".repeat(headers.len())));
    for row in rows {
        out.push_str(&format!("| {} |\n", row.join(" | ")));
    }
    out
}
