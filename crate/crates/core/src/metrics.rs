//! Threshold-free detection metrics. AUC is the Mann-Whitney probability
//! that a random anomaly outscores a random normal with ties counted half;
//! AUPR is the step-wise area under the precision-recall curve with the
//! anomaly class positive.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

fn check_both_classes(labels: &[Label]) -> Result<(usize, usize)> {
    let anomalies = labels.iter().filter(|l| **l == Label::Anomaly).count();
    let normals = labels.len() - anomalies;
    if anomalies == 0 || normals == 0 {
        return Err(Error::Metric(format!(
            "need both classes, got {anomalies} anomalies and {normals} normals"
        )));
    }
    Ok((anomalies, normals))
}

/// Area under the ROC curve via average ranks (Mann-Whitney U).
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument("one label per score required".into()));
    }
    let (n_anomaly, n_normal) = check_both_classes(labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("scores must be finite".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // average ranks over tie groups, 1-based
    let mut rank_sum_anomaly = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == Label::Anomaly {
                rank_sum_anomaly += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_anomaly - (n_anomaly * (n_anomaly + 1)) as f64 / 2.0;
    Ok(u / (n_anomaly as f64 * n_normal as f64))
}

/// Area under the precision-recall curve by sweeping every distinct score
/// threshold from high to low.
pub fn aupr(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument("one label per score required".into()));
    }
    let (n_anomaly, _) = check_both_classes(labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("scores must be finite".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut area = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            match labels[idx] {
                Label::Anomaly => tp += 1,
                Label::Normal => fp += 1,
            }
        }
        let recall = tp as f64 / n_anomaly as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

/// Metrics of one experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub auc: f64,
    pub aupr: f64,
}

/// Aggregated metrics over an experiment's runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub n_runs: usize,
    pub per_run: Vec<RunMetrics>,
    pub auc_mean: f64,
    pub auc_sd: f64,
    pub aupr_mean: f64,
    pub aupr_sd: f64,
}

impl MetricResult {
    pub fn from_runs(per_run: Vec<RunMetrics>) -> Result<Self> {
        if per_run.is_empty() {
            return Err(Error::Argument("need at least one run".into()));
        }
        let n = per_run.len() as f64;
        let mean = |f: fn(&RunMetrics) -> f64| per_run.iter().map(f).sum::<f64>() / n;
        let auc_mean = mean(|r| r.auc);
        let aupr_mean = mean(|r| r.aupr);
        let sd = |vals: Vec<f64>, m: f64| {
            if vals.len() < 2 {
                0.0
            } else {
                (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        };
        Ok(MetricResult {
            n_runs: per_run.len(),
            auc_sd: sd(per_run.iter().map(|r| r.auc).collect(), auc_mean),
            aupr_sd: sd(per_run.iter().map(|r| r.aupr).collect(), aupr_mean),
            per_run,
            auc_mean,
            aupr_mean,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use Label::{Anomaly, Normal};

    #[test]
    fn perfect_ranking_gives_one() {
        let scores = [0.1, 0.2, 5.0, 6.0];
        let labels = [Normal, Normal, Anomaly, Anomaly];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(aupr(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_half_auc() {
        let scores = [1.0; 6];
        let labels = [Normal, Anomaly, Normal, Anomaly, Normal, Anomaly];
        assert!((auc(&scores, &labels).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_a_metric_error() {
        let scores = [1.0, 2.0];
        assert!(matches!(auc(&scores, &[Anomaly, Anomaly]), Err(Error::Metric(_))));
        assert!(matches!(aupr(&scores, &[Normal, Normal]), Err(Error::Metric(_))));
    }

    /// O(n²) pair-counting oracle with ties counted half.
    fn auc_pairs(scores: &[f64], labels: &[Label]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (sa, la) in scores.iter().zip(labels) {
            if *la != Anomaly {
                continue;
            }
            for (sn, ln) in scores.iter().zip(labels) {
                if *ln != Normal {
                    continue;
                }
                pairs += 1.0;
                if sa > sn {
                    wins += 1.0;
                } else if sa == sn {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Threshold-sweep oracle: step area over every distinct threshold.
    fn aupr_sweep(scores: &[f64], labels: &[Label]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let n_anom = labels.iter().filter(|l| **l == Anomaly).count() as f64;
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for t in thresholds {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(s, l)| **s >= t && **l == Anomaly)
                .count() as f64;
            let fp = scores
                .iter()
                .zip(labels)
                .filter(|(s, l)| **s >= t && **l == Normal)
                .count() as f64;
            let recall = tp / n_anom;
            let precision = tp / (tp + fp);
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn random_instances_match_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for case in 0..30 {
            let n = 12;
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(-5i32..=5) as f64) * 0.5) // coarse grid forces ties
                .collect();
            let labels: Vec<Label> = (0..n)
                .map(|i| if i < 4 { Anomaly } else { Normal })
                .collect();
            let fast = auc(&scores, &labels).unwrap();
            let oracle = auc_pairs(&scores, &labels);
            assert!((fast - oracle).abs() < 1e-12, "case {case}: {fast} vs {oracle}");

            let fast_pr = aupr(&scores, &labels).unwrap();
            let oracle_pr = aupr_sweep(&scores, &labels);
            assert!(
                (fast_pr - oracle_pr).abs() < 1e-9,
                "case {case}: {fast_pr} vs {oracle_pr}"
            );
        }
    }

    #[test]
    fn metric_result_aggregates() {
        let runs = vec![
            RunMetrics { seed: 1, auc: 0.9, aupr: 0.8 },
            RunMetrics { seed: 2, auc: 1.0, aupr: 0.9 },
        ];
        let m = MetricResult::from_runs(runs).unwrap();
        assert!((m.auc_mean - 0.95).abs() < 1e-12);
        assert!(m.auc_sd > 0.0);
        let single = MetricResult::from_runs(vec![RunMetrics { seed: 1, auc: 0.7, aupr: 0.6 }]).unwrap();
        assert_eq!(single.auc_sd, 0.0);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            raw in proptest::collection::vec(0.0f64..1.0, 8..20),
        ) {
            let labels: Vec<Label> = (0..raw.len())
                .map(|i| if i % 3 == 0 { Anomaly } else { Normal })
                .collect();
            let base = auc(&raw, &labels).unwrap();
            // strictly monotone transform: exp(2x) + 1
            let transformed: Vec<f64> = raw.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
            let t = auc(&transformed, &labels).unwrap();
            prop_assert!((base - t).abs() < 1e-12);
        }
    }
}
