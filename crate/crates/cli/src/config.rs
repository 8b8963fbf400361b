//! Config file handling: TOML sections `[data]`, `[model]`, `[train]` and
//! `[experiment]`, with every value overridable by a `--set section.key=value`
//! flag and the seed by `SEQ2GMM_SEED`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use seq2gmm::data::{self, Dataset, SynthConfig};
use seq2gmm::experiment::{DataSpec, ExperimentConfig};
use seq2gmm::score::Aggregation;
use seq2gmm::train::TrainingConfig;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// "synthetic" or "ucr".
    pub kind: String,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub normal_class: Option<i64>,
    pub normalize: bool,
    // synthetic generator settings
    pub period_length: usize,
    pub num_normal: usize,
    pub num_anomalous: usize,
    pub max_shift: usize,
    pub anomaly_offset: usize,
    pub anomaly_length: usize,
    pub anomaly_amplitude: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            kind: "synthetic".into(),
            train_path: None,
            test_path: None,
            normal_class: None,
            normalize: true,
            period_length: 100,
            num_normal: 60,
            num_anomalous: 10,
            max_shift: 20,
            anomaly_offset: 38,
            anomaly_length: 25,
            anomaly_amplitude: 0.8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub estimator_hidden: usize,
    pub components: Option<usize>,
    pub segments: Option<usize>,
    pub m_max: usize,
    pub resample_len: usize,
    pub lambda: f64,
    pub eps: f64,
    pub aggregation: String,
    pub shapelet_quantile: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = TrainingConfig::default();
        ModelSection {
            hidden: d.hidden,
            estimator_hidden: d.estimator_hidden,
            components: None,
            segments: None,
            m_max: d.m_max,
            resample_len: d.resample_len,
            lambda: d.lambda,
            eps: d.eps,
            aggregation: "max".into(),
            shapelet_quantile: 0.95,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub rounds: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub eta0: f64,
    pub decay: f64,
    pub joint_eta_scale: f64,
    pub grad_clip: f64,
    pub joint_grad_clip: f64,
    pub seed: u64,
    pub progress: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainingConfig::default();
        TrainSection {
            rounds: d.rounds,
            pretrain_epochs: d.pretrain_epochs,
            batch_size: d.batch_size,
            eta0: d.eta0,
            decay: d.decay,
            joint_eta_scale: d.joint_eta_scale,
            grad_clip: d.grad_clip,
            joint_grad_clip: d.joint_grad_clip,
            seed: 0,
            progress: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub runs: usize,
    pub anomaly_count: usize,
    pub anomaly_counts: Vec<usize>,
    pub deletion_ratios: Vec<f64>,
    pub augment_fractions: Vec<f64>,
    pub augment_copies: usize,
    pub segment_counts: Vec<usize>,
    pub localization_jaccard: f64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            runs: 5,
            anomaly_count: 0,
            anomaly_counts: vec![0],
            deletion_ratios: vec![1.0, 0.95, 0.90],
            augment_fractions: vec![0.05, 0.10],
            augment_copies: 1,
            segment_counts: vec![1, 2, 3, 4],
            localization_jaccard: 0.3,
            out_dir: PathBuf::from("results"),
        }
    }
}

/// Parse one `section.key=value` override into a TOML document.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override '{spec}' is not of the form section.key=value"))?;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.len() != 2 {
        bail!("override key '{path}' must be section.key");
    }
    // value parsed with TOML syntax, falling back to a bare string
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let section = doc
        .entry(parts[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let table = section
        .as_table_mut()
        .with_context(|| format!("'{}' is not a config section", parts[0]))?;
    table.insert(parts[1].to_string(), value);
    Ok(())
}

/// Load the config file (or defaults), then apply `SEQ2GMM_SEED`, `--seed`
/// and `--set` overrides in that order.
pub fn load_config(path: Option<&Path>, seed: Option<u64>, sets: &[String]) -> Result<FileConfig> {
    let mut doc: toml::Table = match path {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("cannot read config file {}", p.display()))?
            .parse()
            .with_context(|| format!("config file {} is not valid TOML", p.display()))?,
        None => toml::Table::new(),
    };
    if let Ok(env_seed) = std::env::var("SEQ2GMM_SEED") {
        let parsed: u64 = env_seed
            .parse()
            .with_context(|| format!("SEQ2GMM_SEED '{env_seed}' is not an unsigned integer"))?;
        apply_override(&mut doc, &format!("train.seed={parsed}"))?;
    }
    if let Some(seed) = seed {
        apply_override(&mut doc, &format!("train.seed={seed}"))?;
    }
    for spec in sets {
        apply_override(&mut doc, spec)?;
    }
    let config: FileConfig = toml::Value::Table(doc)
        .try_into()
        .context("config does not match the expected schema")?;
    Ok(config)
}

impl FileConfig {
    pub fn training_config(&self) -> Result<TrainingConfig> {
        Ok(TrainingConfig {
            lambda: self.model.lambda,
            components: self.model.components,
            hidden: self.model.hidden,
            estimator_hidden: self.model.estimator_hidden,
            rounds: self.train.rounds,
            pretrain_epochs: self.train.pretrain_epochs,
            eta0: self.train.eta0,
            decay: self.train.decay,
            joint_eta_scale: self.train.joint_eta_scale,
            batch_size: self.train.batch_size,
            seed: self.train.seed,
            num_segments: self.model.segments,
            m_max: self.model.m_max,
            resample_len: self.model.resample_len,
            eps: self.model.eps,
            grad_clip: self.train.grad_clip,
            joint_grad_clip: self.train.joint_grad_clip,
            progress: self.train.progress,
        })
    }

    pub fn aggregation(&self) -> Result<Aggregation> {
        Ok(self.model.aggregation.parse()?)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            period_length: self.data.period_length,
            num_normal: self.data.num_normal,
            num_anomalous: self.data.num_anomalous,
            max_shift: self.data.max_shift,
            anomaly_span: (self.data.anomaly_offset, self.data.anomaly_length),
            anomaly_amplitude: self.data.anomaly_amplitude,
            seed: self.train.seed,
        }
    }

    pub fn data_spec(&self) -> Result<DataSpec> {
        match self.data.kind.as_str() {
            "synthetic" => Ok(DataSpec::Synthetic {
                synth: self.synth_config(),
            }),
            "ucr" => {
                let train_path = self
                    .data
                    .train_path
                    .clone()
                    .context("[data].train_path is required for kind = \"ucr\"")?;
                let test_path = self
                    .data
                    .test_path
                    .clone()
                    .context("[data].test_path is required for kind = \"ucr\"")?;
                Ok(DataSpec::Ucr {
                    train_path,
                    test_path,
                    normal_class: self.data.normal_class,
                })
            }
            other => bail!("unknown data kind '{other}' (expected \"synthetic\" or \"ucr\")"),
        }
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::new(self.data_spec()?, self.training_config()?);
        config.runs = self.experiment.runs;
        config.normalize = self.data.normalize;
        config.anomaly_count = self.experiment.anomaly_count;
        config.anomaly_counts = self.experiment.anomaly_counts.clone();
        config.deletion_ratios = self.experiment.deletion_ratios.clone();
        config.augment_fractions = self.experiment.augment_fractions.clone();
        config.augment_copies = self.experiment.augment_copies;
        config.segment_counts = self.experiment.segment_counts.clone();
        config.aggregation = self.aggregation()?;
        config.shapelet_quantile = self.model.shapelet_quantile;
        config.localization_jaccard = self.experiment.localization_jaccard;
        Ok(config)
    }

    /// The training pool named by `[data]` (train side for UCR).
    pub fn load_training_pool(&self) -> Result<Dataset> {
        let ds = match self.data.kind.as_str() {
            "synthetic" => data::synthesize_dataset(&self.synth_config())?,
            "ucr" => {
                let path = self
                    .data
                    .train_path
                    .as_ref()
                    .context("[data].train_path is required for kind = \"ucr\"")?;
                let class = match self.data.normal_class {
                    Some(c) => c,
                    None => data::detect_major_class(path)?,
                };
                data::load_ucr_dataset(path, class)?
            }
            other => bail!("unknown data kind '{other}'"),
        };
        Ok(if self.data.normalize {
            data::znormalize_dataset(&ds)
        } else {
            ds
        })
    }
}

/// Load a dataset from either a JSON dataset document or a delimited
/// label-first text file.
pub fn load_dataset_file(path: &Path, normal_class: Option<i64>, normalize: bool) -> Result<Dataset> {
    let ds = if path.extension().is_some_and(|e| e == "json") {
        let bytes =
            std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_slice::<Dataset>(&bytes)
            .with_context(|| format!("{} is not a dataset JSON document", path.display()))?
    } else {
        let class = match normal_class {
            Some(c) => c,
            None => data::detect_major_class(path)?,
        };
        data::load_ucr_dataset(path, class)?
    };
    Ok(if normalize { data::znormalize_dataset(&ds) } else { ds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_parse_without_a_file() {
        let config = load_config(None, None, &[]).unwrap();
        assert_eq!(config.data.kind, "synthetic");
        assert_eq!(config.train.seed, 0);
    }

    #[test]
    fn file_values_env_and_sets_layer_in_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[train]\nseed = 5\nrounds = 3\n[model]\nhidden = 4").unwrap();
        let config = load_config(
            Some(f.path()),
            Some(7),
            &["model.hidden=6".into(), "experiment.runs=2".into()],
        )
        .unwrap();
        assert_eq!(config.train.seed, 7);
        assert_eq!(config.train.rounds, 3);
        assert_eq!(config.model.hidden, 6);
        assert_eq!(config.experiment.runs, 2);
    }

    #[test]
    fn bad_override_is_rejected() {
        assert!(load_config(None, None, &["nonsense".into()]).is_err());
        assert!(load_config(None, None, &["a.b.c=1".into()]).is_err());
        assert!(load_config(None, None, &["model.unknown_key=1".into()]).is_err());
    }

    #[test]
    fn array_overrides_parse_as_toml() {
        let config = load_config(None, None, &["experiment.anomaly_counts=[0, 9, 18]".into()])
            .unwrap();
        assert_eq!(config.experiment.anomaly_counts, vec![0, 9, 18]);
    }
}
