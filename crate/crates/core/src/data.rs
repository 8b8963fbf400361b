//! Dataset loading, benchmark splits, synthetic signal generation and
//! deletion-based augmentation.
//!
//! Everything here is pure given `(input, seed)`: randomized operations take
//! an explicit seed so splits and augmentations reproduce exactly.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomaly,
}

/// One univariate sequence. Variable length by design: timing errors make
/// equal-length input an unrealistic assumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    pub values: Vec<f64>,
    pub label: Option<Label>,
    pub source_class: Option<i64>,
}

impl TimeSeries {
    pub fn new(
        id: impl Into<String>,
        values: Vec<f64>,
        label: Option<Label>,
        source_class: Option<i64>,
    ) -> Result<Self> {
        let id = id.into();
        if values.len() < 4 {
            return Err(Error::Argument(format!(
                "series '{id}' has {} samples, need at least 4",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "series '{id}' has a non-finite sample at index {bad}"
            )));
        }
        Ok(TimeSeries {
            id,
            values,
            label,
            source_class,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A bundle of related series analyzed jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub series: Vec<TimeSeries>,
    pub normal_class: i64,
}

impl Dataset {
    pub fn new(name: impl Into<String>, series: Vec<TimeSeries>, normal_class: i64) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Argument("dataset must be non-empty".into()));
        }
        let mut seen = HashSet::new();
        for s in &series {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Argument(format!("duplicate series id '{}'", s.id)));
            }
        }
        Ok(Dataset {
            name: name.into(),
            series,
            normal_class,
        })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.series.iter().filter(|s| s.label == Some(label)).count()
    }

    /// SHA-256 over ids, labels and raw samples; pins experiment outputs to
    /// their exact input data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.series {
            h.update(s.id.as_bytes());
            h.update([match s.label {
                None => 0u8,
                Some(Label::Normal) => 1,
                Some(Label::Anomaly) => 2,
            }]);
            h.update((s.values.len() as u64).to_le_bytes());
            for v in &s.values {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Synthetic quasi-periodic signals: one sine period, cyclically shifted
/// copies (Type-1 timing error), plus optional injected bump anomalies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub period_length: usize,
    pub num_normal: usize,
    pub num_anomalous: usize,
    /// Maximum cyclic shift in samples; each series draws uniformly from [0, max_shift].
    pub max_shift: usize,
    /// (offset, length) of the injected anomaly, in samples of the output series.
    pub anomaly_span: (usize, usize),
    pub anomaly_amplitude: f64,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.period_length < 4 {
            return Err(Error::Argument("period_length must be at least 4".into()));
        }
        if self.num_normal == 0 {
            return Err(Error::Argument("num_normal must be positive".into()));
        }
        let (off, len) = self.anomaly_span;
        if off + len > self.period_length {
            return Err(Error::Argument(format!(
                "anomaly span ({off},{len}) exceeds the period length {}",
                self.period_length
            )));
        }
        if self.max_shift >= self.period_length {
            return Err(Error::Argument("max_shift must be smaller than the period".into()));
        }
        Ok(())
    }
}

fn detect_delimiter(line: &str) -> char {
    if line.contains('\t') {
        '\t'
    } else if line.contains(',') {
        ','
    } else {
        ' '
    }
}

fn parse_class_token(tok: &str, line_no: usize) -> Result<i64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("non-numeric class label '{tok}'"),
    })?;
    if (v - v.round()).abs() > 1e-9 {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("class label '{tok}' is not an integer"),
        });
    }
    Ok(v.round() as i64)
}

/// Load a delimited label-first file: one series per row, first field the
/// integer class label, remaining fields the samples. Tab, comma and
/// whitespace delimiters are auto-detected per file. Rows of class
/// `normal_class` are labeled Normal, all others Anomaly.
pub fn load_ucr_dataset(path: impl AsRef<Path>, normal_class: i64) -> Result<Dataset> {
    let rows = load_ucr_rows(path.as_ref())?;
    let name = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    if !rows.iter().any(|(c, _)| *c == normal_class) {
        return Err(Error::Config(format!(
            "class {normal_class} does not appear in {}",
            path.as_ref().display()
        )));
    }
    let series = rows
        .into_iter()
        .enumerate()
        .map(|(i, (class, values))| {
            let label = if class == normal_class {
                Label::Normal
            } else {
                Label::Anomaly
            };
            TimeSeries::new(format!("{name}-{:04}", i + 1), values, Some(label), Some(class))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, series, normal_class)
}

/// The most frequent class in a label-first file ("major class").
pub fn detect_major_class(path: impl AsRef<Path>) -> Result<i64> {
    let rows = load_ucr_rows(path.as_ref())?;
    let mut counts: Vec<(i64, usize)> = Vec::new();
    for (class, _) in &rows {
        match counts.iter_mut().find(|(c, _)| c == class) {
            Some((_, n)) => *n += 1,
            None => counts.push((*class, 1)),
        }
    }
    // Ties break toward the smaller class id for determinism.
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(counts[0].0)
}

fn load_ucr_rows(path: &Path) -> Result<Vec<(i64, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
    // Trailing blank lines are file-format noise, interior ones are errors.
    while matches!(lines.last(), Some((_, l)) if l.trim().is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "file contains no rows".into(),
        });
    }
    let delim = detect_delimiter(lines[0].1);
    let mut rows = Vec::with_capacity(lines.len());
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty row".into(),
            });
        }
        let mut toks: Vec<&str> = if delim == ' ' {
            line.split_whitespace().collect()
        } else {
            line.split(delim).map(str::trim).collect()
        };
        while matches!(toks.last(), Some(t) if t.is_empty()) {
            toks.pop();
        }
        let class = parse_class_token(toks[0], line_no)?;
        let values = toks[1..]
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("non-numeric sample '{t}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("row has only {} samples, need at least 4", values.len()),
            });
        }
        rows.push((class, values));
    }
    Ok(rows)
}

/// Split into a training set (all Normal series plus `anomaly_count` randomly
/// drawn Anomaly series) and the remaining series. Deterministic given seed.
pub fn build_benchmark(
    dataset: &Dataset,
    anomaly_count: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let anomaly_idx: Vec<usize> = dataset
        .series
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == Some(Label::Anomaly))
        .map(|(i, _)| i)
        .collect();
    if anomaly_count > anomaly_idx.len() {
        return Err(Error::Argument(format!(
            "requested {anomaly_count} anomalies but only {} available",
            anomaly_idx.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, anomaly_idx.len(), anomaly_count);
    let chosen: HashSet<usize> = picked.iter().map(|i| anomaly_idx[i]).collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, s) in dataset.series.iter().enumerate() {
        if s.label == Some(Label::Normal) || chosen.contains(&i) {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Argument(
            "benchmark split needs both normal and leftover series".into(),
        ));
    }
    Ok((
        Dataset::new(format!("{}-train", dataset.name), train, dataset.normal_class)?,
        Dataset::new(format!("{}-test", dataset.name), test, dataset.normal_class)?,
    ))
}

/// Z-normalize with the population standard deviation; a constant series
/// maps to all zeros.
pub fn znormalize(series: &TimeSeries) -> TimeSeries {
    let n = series.values.len() as f64;
    let mean = series.values.iter().sum::<f64>() / n;
    let var = series.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let values = if sd == 0.0 {
        vec![0.0; series.values.len()]
    } else {
        series.values.iter().map(|v| (v - mean) / sd).collect()
    };
    TimeSeries {
        id: series.id.clone(),
        values,
        label: series.label,
        source_class: series.source_class,
    }
}

pub fn znormalize_dataset(dataset: &Dataset) -> Dataset {
    Dataset {
        name: dataset.name.clone(),
        series: dataset.series.iter().map(znormalize).collect(),
        normal_class: dataset.normal_class,
    }
}

fn cyclic_shift(base: &[f64], k: usize) -> Vec<f64> {
    let n = base.len();
    (0..n).map(|t| base[(t + k) % n]).collect()
}

/// Generate a bundle of cyclically shifted sine periods; anomalous series
/// additionally get `anomaly_amplitude` added over `anomaly_span`.
pub fn synthesize_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let p = config.period_length;
    let base: Vec<f64> = (0..p)
        .map(|t| (2.0 * std::f64::consts::PI * t as f64 / p as f64).sin())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut series = Vec::with_capacity(config.num_normal + config.num_anomalous);
    for i in 0..config.num_normal {
        let k = rand::Rng::random_range(&mut rng, 0..=config.max_shift);
        series.push(TimeSeries::new(
            format!("normal-{:04}", i + 1),
            cyclic_shift(&base, k),
            Some(Label::Normal),
            None,
        )?);
    }
    let (off, len) = config.anomaly_span;
    for i in 0..config.num_anomalous {
        let k = rand::Rng::random_range(&mut rng, 0..=config.max_shift);
        let mut values = cyclic_shift(&base, k);
        for v in &mut values[off..off + len] {
            *v += config.anomaly_amplitude;
        }
        series.push(TimeSeries::new(
            format!("anomaly-{:04}", i + 1),
            values,
            Some(Label::Anomaly),
            None,
        )?);
    }
    Dataset::new("synthetic", series, 0)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Remove `round(drop_fraction * length)` sample positions uniformly at
/// random without replacement, keeping the survivors in order (Type-2
/// timing error).
pub fn apply_type2_deletion(
    series: &TimeSeries,
    drop_fraction: f64,
    seed: u64,
) -> Result<TimeSeries> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::Argument(format!(
            "drop_fraction {drop_fraction} outside [0,1)"
        )));
    }
    let n = series.values.len();
    let n_drop = round_half_up(drop_fraction * n as f64);
    if n - n_drop < 4 {
        return Err(Error::Argument(format!(
            "dropping {n_drop} of {n} samples leaves fewer than 4"
        )));
    }
    if n_drop == 0 {
        return Ok(series.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped: Vec<usize> = rand::seq::index::sample(&mut rng, n, n_drop).into_vec();
    dropped.sort_unstable();
    let mut values = Vec::with_capacity(n - n_drop);
    let mut next = 0usize;
    for (i, v) in series.values.iter().enumerate() {
        if next < dropped.len() && dropped[next] == i {
            next += 1;
        } else {
            values.push(*v);
        }
    }
    Ok(TimeSeries {
        id: series.id.clone(),
        values,
        label: series.label,
        source_class: series.source_class,
    })
}

/// Append deletion-augmented copies: for every series and every fraction,
/// `copies_per_fraction` variants with fresh sub-seeds. Copies inherit the
/// parent label.
pub fn augment_training_set(
    train: &Dataset,
    fractions: &[f64],
    copies_per_fraction: usize,
    seed: u64,
) -> Result<Dataset> {
    if copies_per_fraction == 0 {
        return Err(Error::Argument("copies_per_fraction must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series = train.series.clone();
    for parent in &train.series {
        for (fi, &fraction) in fractions.iter().enumerate() {
            for copy in 0..copies_per_fraction {
                let sub_seed = rand::Rng::random::<u64>(&mut rng);
                let mut variant = apply_type2_deletion(parent, fraction, sub_seed)?;
                variant.id = format!("{}__aug_f{}_c{}", parent.id, fi + 1, copy + 1);
                series.push(variant);
            }
        }
    }
    Dataset::new(train.name.clone(), series, train.normal_class)
}
