//! Command-line interface: dataset synthesis, segmentation, training,
//! scoring with shapelet localization, latent export and the experiment
//! harnesses.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use seq2gmm::data::{build_benchmark, Dataset, Label};
use seq2gmm::experiment::{
    markdown_table, run_ablation_segments, run_benchmark, run_contamination, run_deletion,
    run_synthetic, DataSpec,
};
use seq2gmm::score::{self, score_report, scores_csv, ScoreReport};
use seq2gmm::segment::{optimize_breakpoints, select_num_segments, split_series};
use seq2gmm::train::{load_model, save_model, surrogate_train};

use config::{load_config, load_dataset_file, FileConfig};

#[derive(Parser)]
#[command(
    name = "seq2gmm",
    about = "Group anomaly detection for quasi-periodic time series",
    version
)]
struct Cli {
    /// TOML config file with [data], [model], [train], [experiment] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override [train].seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any config value, e.g. --set model.hidden=16 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as JSON.
    Synth {
        #[arg(long, default_value = "dataset.json")]
        out: PathBuf,
    },
    /// Emit per-series breakpoints and segment spans as JSON.
    Segment {
        /// Dataset file (JSON document or delimited label-first text);
        /// defaults to the configured training pool.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "segments.json")]
        out: PathBuf,
    },
    /// Train a model and write the model file plus its sidecar.
    Train {
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Score a dataset with a trained model; one JSON line per series.
    Score {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "scores.jsonl")]
        out: PathBuf,
        /// Also write a series_id,score,label table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Benchmark experiment: train/score over several seeds.
    Eval,
    /// Contamination sweep over injected training anomalies.
    Contaminate,
    /// Deletion robustness at shortened test lengths, with and without
    /// augmentation.
    Deletion,
    /// Segment-count ablation.
    Ablate,
    /// Export every segment's latent vector, 2-D projection and energy.
    ExportLatent {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "latent.csv")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout with success; usage errors
            // go to stderr with exit code 1
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref(), cli.seed, &cli.sets)?;
    match cli.command {
        Command::Synth { out } => synth(&config, &out),
        Command::Segment { input, out } => segment(&config, input.as_deref(), &out),
        Command::Train { out } => train(&config, &out),
        Command::Score { input, model, out, csv } => score(&config, &input, &model, &out, csv.as_deref()),
        Command::Eval => eval(&config),
        Command::Contaminate => contaminate(&config),
        Command::Deletion => deletion(&config),
        Command::Ablate => ablate(&config),
        Command::ExportLatent { input, model, out } => export_latent(&config, &input, &model, &out),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn synth(config: &FileConfig, out: &Path) -> Result<()> {
    let ds = seq2gmm::data::synthesize_dataset(&config.synth_config())?;
    write_json(out, &ds)?;
    println!("wrote {} series to {}", ds.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SegmentReport {
    id: String,
    #[serde(rename = "M")]
    num_segments: usize,
    breakpoints: Vec<usize>,
    beta: Vec<f64>,
    residual_sse: f64,
    spans: Vec<SpanReport>,
}

#[derive(Serialize)]
struct SpanReport {
    index: usize,
    start: usize,
    end: usize,
}

fn segment(config: &FileConfig, input: Option<&Path>, out: &Path) -> Result<()> {
    let dataset = match input {
        Some(path) => load_dataset_file(path, config.data.normal_class, config.data.normalize)?,
        None => config.load_training_pool()?,
    };
    let num_segments = match config.model.segments {
        Some(m) => m,
        None => select_num_segments(
            &dataset,
            config.model.m_max,
            config.model.resample_len,
            config.train.seed,
        )?,
    };
    let reports = dataset
        .series
        .iter()
        .map(|series| {
            let model = optimize_breakpoints(series, num_segments)?;
            let spans = split_series(series, &model)?
                .into_iter()
                .map(|s| SpanReport {
                    index: s.index,
                    start: s.start,
                    end: s.end,
                })
                .collect();
            Ok(SegmentReport {
                id: series.id.clone(),
                num_segments: model.num_segments,
                breakpoints: model.breakpoints,
                beta: model.beta,
                residual_sse: model.residual_sse,
                spans,
            })
        })
        .collect::<Result<Vec<_>, seq2gmm::Error>>()?;
    write_json(out, &reports)?;
    println!("segmented {} series with M={num_segments} into {}", reports.len(), out.display());
    Ok(())
}

fn training_set(config: &FileConfig) -> Result<Dataset> {
    let pool = config.load_training_pool()?;
    if config.experiment.anomaly_count > 0 || pool.count_label(Label::Anomaly) > 0 {
        let (train, _) = build_benchmark(&pool, config.experiment.anomaly_count, config.train.seed)?;
        Ok(train)
    } else {
        Ok(pool)
    }
}

fn train(config: &FileConfig, out: &Path) -> Result<()> {
    let train_set = training_set(config)?;
    let train_cfg = config.training_config()?;
    let outcome = surrogate_train(&train_set, &train_cfg)?;
    save_model(&outcome.model, &train_cfg, &outcome.trace, &train_set.fingerprint(), out)?;
    println!(
        "trained on {} series (M={}, K={}); model written to {}",
        train_set.len(),
        outcome.model.num_segments,
        outcome.model.gmm.k,
        out.display()
    );
    Ok(())
}

fn score(
    config: &FileConfig,
    input: &Path,
    model_path: &Path,
    out: &Path,
    csv: Option<&Path>,
) -> Result<()> {
    let (model, _sidecar) = load_model(model_path)?;
    let dataset = load_dataset_file(input, config.data.normal_class, model.normalized_inputs)?;
    let aggregation = config.aggregation()?;
    let mut lines = String::new();
    let mut reports: Vec<(ScoreReport, Option<Label>)> = Vec::new();
    for series in &dataset.series {
        let report = score_report(series, &model, aggregation, config.model.shapelet_quantile)?;
        lines.push_str(&serde_json::to_string(&report)?);
        lines.push('\n');
        reports.push((report, series.label));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, lines).with_context(|| format!("cannot write {}", out.display()))?;
    if let Some(csv_path) = csv {
        std::fs::write(csv_path, scores_csv(&reports))
            .with_context(|| format!("cannot write {}", csv_path.display()))?;
    }
    println!("scored {} series into {}", dataset.len(), out.display());
    Ok(())
}

fn export_latent(config: &FileConfig, input: &Path, model_path: &Path, out: &Path) -> Result<()> {
    let (model, _) = load_model(model_path)?;
    let dataset = load_dataset_file(input, config.data.normal_class, model.normalized_inputs)?;
    let export = score::export_latent(&dataset, &model)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, export.to_csv())
        .with_context(|| format!("cannot write {}", out.display()))?;
    println!("exported {} latent rows to {}", export.rows.len(), out.display());
    Ok(())
}

/// Train once at the base seed and dump the per-series scores, the latent
/// export and the training trace into the results directory.
fn dump_representative_run(config: &FileConfig, out_dir: &Path) -> Result<()> {
    let train_set = training_set(config)?;
    let train_cfg = config.training_config()?;
    let outcome = surrogate_train(&train_set, &train_cfg)?;
    let seed = train_cfg.seed;

    let eval_set = match config.data_spec()? {
        DataSpec::Synthetic { .. } => config.load_training_pool()?,
        DataSpec::Ucr { test_path, .. } => {
            load_dataset_file(&test_path, config.data.normal_class, config.data.normalize)?
        }
    };
    let aggregation = config.aggregation()?;
    let mut lines = String::new();
    let mut reports = Vec::new();
    for series in &eval_set.series {
        let report =
            score_report(series, &outcome.model, aggregation, config.model.shapelet_quantile)?;
        lines.push_str(&serde_json::to_string(&report)?);
        lines.push('\n');
        reports.push((report, series.label));
    }
    std::fs::create_dir_all(out_dir.join("scores"))?;
    std::fs::create_dir_all(out_dir.join("latent"))?;
    std::fs::create_dir_all(out_dir.join("trace"))?;
    std::fs::write(out_dir.join(format!("scores/seed-{seed}.jsonl")), lines)?;
    std::fs::write(
        out_dir.join(format!("scores/seed-{seed}.csv")),
        scores_csv(&reports),
    )?;
    let export = score::export_latent(&eval_set, &outcome.model)?;
    std::fs::write(out_dir.join(format!("latent/seed-{seed}.csv")), export.to_csv())?;
    write_json(&out_dir.join(format!("trace/seed-{seed}.json")), &outcome.trace)?;
    Ok(())
}

fn metric_row(m: &seq2gmm::metrics::MetricResult) -> Vec<String> {
    vec![
        format!("{:.4} ± {:.4}", m.auc_mean, m.auc_sd),
        format!("{:.4} ± {:.4}", m.aupr_mean, m.aupr_sd),
        m.n_runs.to_string(),
    ]
}

fn finish_experiment(
    config: &FileConfig,
    results: &impl Serialize,
    table: String,
) -> Result<()> {
    let out_dir = &config.experiment.out_dir;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    write_json(&out_dir.join("results.json"), results)?;
    std::fs::write(out_dir.join("results.md"), &table)?;
    dump_representative_run(config, out_dir)?;
    println!("{table}");
    println!("results written to {}", out_dir.display());
    Ok(())
}

fn eval(config: &FileConfig) -> Result<()> {
    let experiment = config.experiment_config()?;
    match &experiment.data {
        DataSpec::Synthetic { .. } => {
            let outcome = run_synthetic(&experiment)?;
            let table = markdown_table(
                &["auc", "aupr", "runs", "localization", "top-shapelet"],
                &[vec![
                    format!("{:.4} ± {:.4}", outcome.metrics.auc_mean, outcome.metrics.auc_sd),
                    format!("{:.4} ± {:.4}", outcome.metrics.aupr_mean, outcome.metrics.aupr_sd),
                    outcome.metrics.n_runs.to_string(),
                    format!("{:.3}", outcome.localization_hit_rate),
                    format!("{:.3}", outcome.top_shapelet_hit_rate),
                ]],
            );
            finish_experiment(config, &outcome, table)
        }
        DataSpec::Ucr { .. } => {
            let metrics = run_benchmark(&experiment)?;
            let table = markdown_table(&["auc", "aupr", "runs"], &[metric_row(&metrics)]);
            finish_experiment(config, &metrics, table)
        }
    }
}

fn contaminate(config: &FileConfig) -> Result<()> {
    let experiment = config.experiment_config()?;
    let rows = run_contamination(&experiment)?;
    let table = markdown_table(
        &["injected", "auc", "aupr", "runs", "loss"],
        &rows
            .iter()
            .map(|r| {
                let mut row = vec![r.anomaly_count.to_string()];
                row.extend(metric_row(&r.metrics));
                row.push(format!("{:.2}%", 100.0 * r.relative_loss));
                row
            })
            .collect::<Vec<_>>(),
    );
    finish_experiment(config, &rows, table)
}

fn deletion(config: &FileConfig) -> Result<()> {
    let experiment = config.experiment_config()?;
    let rows = run_deletion(&experiment)?;
    let table = markdown_table(
        &["ratio", "augmented", "auc", "aupr", "runs"],
        &rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    format!("{:.0}%", 100.0 * r.ratio),
                    r.augmented.to_string(),
                ];
                row.extend(metric_row(&r.metrics));
                row
            })
            .collect::<Vec<_>>(),
    );
    finish_experiment(config, &rows, table)
}

fn ablate(config: &FileConfig) -> Result<()> {
    let experiment = config.experiment_config()?;
    let rows = run_ablation_segments(&experiment)?;
    let table = markdown_table(
        &["segments", "auc", "aupr", "runs"],
        &rows
            .iter()
            .map(|r| {
                let mut row = vec![r.num_segments.to_string()];
                row.extend(metric_row(&r.metrics));
                row
            })
            .collect::<Vec<_>>(),
    );
    finish_experiment(config, &rows, table)
}

