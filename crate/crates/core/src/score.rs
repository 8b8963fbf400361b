//! Scoring and localization: per-segment energies against the frozen
//! mixture, series-level aggregation, anomaly-shapelet extraction and the
//! latent-space export used for visualization.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, TimeSeries};
use crate::error::{Error, Result};
use crate::gmm::PreparedGmm;
use crate::linalg::{symmetric_eigen, Mat};
use crate::nn;
use crate::segment::{optimize_breakpoints, split_series, Segment};
use crate::train::TrainedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Argument(format!("unknown aggregation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shapelet {
    pub segment_index: usize,
    /// 1-based inclusive sample span within the series.
    pub span: (usize, usize),
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub series_id: String,
    pub segment_scores: Vec<f64>,
    pub series_score: f64,
    pub shapelets: Vec<Shapelet>,
}

/// One exported latent row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub series_id: String,
    pub segment_index: usize,
    pub label: Option<Label>,
    pub y: Vec<f64>,
    pub y2d: [f64; 2],
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentExport {
    pub rows: Vec<LatentRow>,
}

fn scored_segments(series: &TimeSeries, model: &TrainedModel) -> Result<Vec<(Segment, f64)>> {
    let seg_model = optimize_breakpoints(series, model.num_segments)?;
    let prepared = model.gmm.prepare()?;
    split_series(series, &seg_model)?
        .into_iter()
        .map(|seg| {
            let latent = nn::latent_representation(&seg.values, &model.encoder, &model.decoder)?;
            let energy = prepared.sample_energy(&latent.y);
            Ok((seg, energy))
        })
        .collect()
}

/// Per-segment energies for one series. Breakpoints are re-optimized for
/// this series; only the mixture and networks come from the model.
pub fn score_segments(series: &TimeSeries, model: &TrainedModel) -> Result<Vec<f64>> {
    Ok(scored_segments(series, model)?.into_iter().map(|(_, e)| e).collect())
}

/// Aggregate segment energies into the series-level anomaly score.
pub fn score_series(segment_scores: &[f64], aggregation: Aggregation) -> Result<f64> {
    if segment_scores.is_empty() {
        return Err(Error::Argument("cannot aggregate an empty score list".into()));
    }
    Ok(match aggregation {
        Aggregation::Max => segment_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => segment_scores.iter().sum::<f64>() / segment_scores.len() as f64,
    })
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Argument(format!("quantile level {q} outside [0,1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}

/// Segments whose energy exceeds the `quantile_threshold` quantile of the
/// training energies, with their sample spans, sorted by descending score.
pub fn localize_shapelets(
    series: &TimeSeries,
    model: &TrainedModel,
    quantile_threshold: f64,
) -> Result<Vec<Shapelet>> {
    if !(0.0..1.0).contains(&quantile_threshold) {
        return Err(Error::Argument(format!(
            "quantile threshold {quantile_threshold} outside (0,1)"
        )));
    }
    if model.training_energies.is_empty() {
        return Err(Error::Argument(
            "model carries no training energy distribution (missing sidecar?)".into(),
        ));
    }
    let threshold = quantile(&model.training_energies, quantile_threshold)?;
    let mut shapelets: Vec<Shapelet> = scored_segments(series, model)?
        .into_iter()
        .filter(|(_, energy)| *energy > threshold)
        .map(|(seg, energy)| Shapelet {
            segment_index: seg.index,
            span: (seg.start, seg.end),
            score: energy,
        })
        .collect();
    shapelets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    Ok(shapelets)
}

/// Everything the score report needs for one series.
pub fn score_report(
    series: &TimeSeries,
    model: &TrainedModel,
    aggregation: Aggregation,
    quantile_threshold: f64,
) -> Result<ScoreReport> {
    let segment_scores = score_segments(series, model)?;
    let series_score = score_series(&segment_scores, aggregation)?;
    let shapelets = localize_shapelets(series, model, quantile_threshold)?;
    Ok(ScoreReport {
        series_id: series.id.clone(),
        segment_scores,
        series_score,
        shapelets,
    })
}

/// Project onto the top two principal axes of the points' own covariance.
/// Eigenvector signs are fixed inside the eigensolver, so the projection is
/// reproducible.
pub(crate) fn project_top2(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let d = points[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = Mat::zeros(d, d);
    for p in points {
        let diff: Vec<f64> = p.iter().zip(&mean).map(|(a, b)| a - b).collect();
        cov.add_outer(1.0 / n as f64, &diff, &diff);
    }
    let (_, vectors) = symmetric_eigen(&cov)?;
    Ok(points
        .iter()
        .map(|p| {
            let diff: Vec<f64> = p.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let mut out = [0.0; 2];
            for axis in 0..2.min(d) {
                out[axis] = (0..d).map(|j| vectors[(j, axis)] * diff[j]).sum();
            }
            out
        })
        .collect())
}

/// Latent vectors, energies and a 2-D principal-component projection for
/// every segment of the dataset.
pub fn export_latent(dataset: &Dataset, model: &TrainedModel) -> Result<LatentExport> {
    let prepared: PreparedGmm = model.gmm.prepare()?;
    let mut meta = Vec::new();
    let mut ys = Vec::new();
    for series in &dataset.series {
        let seg_model = optimize_breakpoints(series, model.num_segments)?;
        for seg in split_series(series, &seg_model)? {
            let latent = nn::latent_representation(&seg.values, &model.encoder, &model.decoder)?;
            let energy = prepared.sample_energy(&latent.y);
            meta.push((series.id.clone(), seg.index, series.label, energy));
            ys.push(latent.y);
        }
    }
    let projected = project_top2(&ys)?;
    let rows = meta
        .into_iter()
        .zip(ys)
        .zip(projected)
        .map(|(((series_id, segment_index, label, energy), y), y2d)| LatentRow {
            series_id,
            segment_index,
            label,
            y,
            y2d,
            energy,
        })
        .collect();
    Ok(LatentExport { rows })
}

impl LatentExport {
    /// CSV with one row per segment; consumed by external plotting tools.
    pub fn to_csv(&self) -> String {
        let dim = self.rows.first().map_or(0, |r| r.y.len());
        let mut out = String::from("series_id,segment_index,label");
        for j in 0..dim {
            out.push_str(&format!(",y{j}"));
        }
        out.push_str(",pc1,pc2,energy\n");
        for row in &self.rows {
            let label = match row.label {
                Some(Label::Normal) => "normal",
                Some(Label::Anomaly) => "anomaly",
                None => "",
            };
            out.push_str(&format!("{},{},{label}", row.series_id, row.segment_index));
            for v in &row.y {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{},{}\n", row.y2d[0], row.y2d[1], row.energy));
        }
        out
    }
}

/// `series_id,score,label` CSV for a scored dataset.
pub fn scores_csv(reports: &[(ScoreReport, Option<Label>)]) -> String {
    let mut out = String::from("series_id,score,label\n");
    for (report, label) in reports {
        let label = match label {
            Some(Label::Normal) => "normal",
            Some(Label::Anomaly) => "anomaly",
            None => "",
        };
        out.push_str(&format!("{},{},{label}\n", report.series_id, report.series_score));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_dataset, znormalize_dataset, SynthConfig};
    use crate::gmm::GmmParams;
    use crate::nn::{DecoderParams, EncoderParams, EstimatorParams};
    use crate::train::{surrogate_train, TrainingConfig};

    fn zero_model(h: usize) -> TrainedModel {
        let d = h + 2;
        TrainedModel {
            num_segments: 1,
            normalized_inputs: false,
            encoder: EncoderParams::zeros(h),
            decoder: DecoderParams::zeros(h),
            estimator: EstimatorParams::zeros(d, 4, 1),
            gmm: GmmParams {
                k: 1,
                weights: vec![1.0],
                means: vec![vec![0.0; d]],
                covariances: vec![Mat::identity(d)],
                eps: 0.0,
            },
            training_energies: vec![0.0; 10],
            pretrain_loss: 0.0,
        }
    }

    #[test]
    fn zero_segment_at_component_mean_has_closed_form_energy() {
        // zero weights reconstruct a zero segment exactly, so y = 0 = μ and
        // the energy is (d/2)·ln 2π
        let model = zero_model(3);
        let series = TimeSeries::new("z", vec![0.0; 8], None, None).unwrap();
        let scores = score_segments(&series, &model).unwrap();
        assert_eq!(scores.len(), 1);
        let expect = 5.0 / 2.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((scores[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn aggregation_rules() {
        assert_eq!(score_series(&[1.0, 2.0, 3.0], Aggregation::Max).unwrap(), 3.0);
        assert_eq!(score_series(&[1.0, 2.0, 3.0], Aggregation::Mean).unwrap(), 2.0);
        assert_eq!(score_series(&[4.0], Aggregation::Max).unwrap(), 4.0);
        assert_eq!(score_series(&[4.0], Aggregation::Mean).unwrap(), 4.0);
        assert!(score_series(&[], Aggregation::Max).is_err());
        // max dominates mean for any score list
        let scores = [0.3, -1.0, 2.5, 0.1];
        assert!(
            score_series(&scores, Aggregation::Max).unwrap()
                >= score_series(&scores, Aggregation::Mean).unwrap()
        );
    }

    #[test]
    fn quantile_interpolation() {
        let values = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&values, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&values, 1.0).unwrap(), 4.0);
        assert!((quantile(&values, 0.5).unwrap() - 2.5).abs() < 1e-12);
    }

    fn trained_fixture() -> (Dataset, TrainedModel) {
        let ds = znormalize_dataset(
            &synthesize_dataset(&SynthConfig {
                period_length: 48,
                num_normal: 14,
                num_anomalous: 4,
                max_shift: 8,
                anomaly_span: (12, 8),
                anomaly_amplitude: 1.5,
                seed: 71,
            })
            .unwrap(),
        );
        let train = Dataset::new(
            "synthetic-train",
            ds.series
                .iter()
                .filter(|s| s.label == Some(Label::Normal))
                .cloned()
                .collect(),
            0,
        )
        .unwrap();
        let config = TrainingConfig {
            components: Some(2),
            hidden: 4,
            estimator_hidden: 5,
            rounds: 3,
            pretrain_epochs: 15,
            batch_size: 8,
            num_segments: Some(2),
            progress: false,
            ..TrainingConfig::default()
        };
        let outcome = surrogate_train(&train, &config).unwrap();
        (ds, outcome.model)
    }

    #[test]
    fn repeated_scoring_is_bit_identical() {
        let (ds, model) = trained_fixture();
        let series = &ds.series[0];
        let a = score_segments(series, &model).unwrap();
        let b = score_segments(series, &model).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn shapelets_monotone_in_threshold_and_sorted() {
        let (ds, model) = trained_fixture();
        for series in &ds.series {
            let low = localize_shapelets(series, &model, 0.5).unwrap();
            let high = localize_shapelets(series, &model, 0.95).unwrap();
            assert!(high.len() <= low.len());
            for pair in low.windows(2) {
                assert!(pair[0].score >= pair[1].score);
            }
            // every shapelet span lies inside the series
            for s in &low {
                assert!(s.span.0 >= 1 && s.span.1 <= series.len() && s.span.0 <= s.span.1);
            }
            // shapelet scores are a subset of the segment scores
            let scores = score_segments(series, &model).unwrap();
            for s in &low {
                assert!(scores.iter().any(|v| (v - s.score).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn export_has_one_row_per_segment_and_consistent_projection() {
        let (ds, model) = trained_fixture();
        let export = export_latent(&ds, &model).unwrap();
        assert_eq!(export.rows.len(), ds.len() * model.num_segments);
        let csv = export.to_csv();
        assert_eq!(csv.lines().count(), export.rows.len() + 1);
        assert!(csv.lines().next().unwrap().starts_with("series_id,segment_index,label"));
    }

    #[test]
    fn projection_preserves_norms_in_two_dimensions() {
        // with d = 2 the principal axes are a full orthonormal basis, so the
        // projection is a rotation of the centered points
        let points = vec![
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![-1.0, 0.5],
            vec![2.0, -1.0],
        ];
        let projected = project_top2(&points).unwrap();
        let mean = [0.5, 0.375];
        for (p, q) in points.iter().zip(&projected) {
            let centered = [(p[0] - mean[0]), (p[1] - mean[1])];
            let n0 = (centered[0].powi(2) + centered[1].powi(2)).sqrt();
            let n1 = (q[0].powi(2) + q[1].powi(2)).sqrt();
            assert!((n0 - n1).abs() < 1e-9);
        }
    }
}
