use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Test-set scores of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub auc: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Area under the ROC curve from the rank-sum statistic with midranks for ties.
pub fn auc_midrank(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Contract(format!("label {bad} is not 0 or 1")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Contract("scores must be finite".into()));
    }
    Ok(())
}

/// Accuracy, recall and F1 at `threshold` on probabilities plus rank AUC.
///
/// Recall is 0 without positives; F1 is 0 when precision + recall is 0.
pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    let auc = auc_midrank(scores, labels)?;
    let (mut tp, mut tn, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let acc = ratio(tp + tn, labels.len());
    let recall = ratio(tp, tp + fneg);
    let precision = ratio(tp, tp + fp);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        acc,
        auc,
        recall,
        f1,
    })
}

/// Mean, sample standard deviation and the raw values they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub raw: Vec<f64>,
}

impl Summary {
    pub fn from_values(raw: Vec<f64>) -> Self {
        let n = raw.len() as f64;
        let mean = if raw.is_empty() { 0.0 } else { raw.iter().sum::<f64>() / n };
        let std = if raw.len() < 2 {
            0.0
        } else {
            (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Summary { mean, std, raw }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummaries {
    pub acc: Summary,
    pub auc: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

/// Cross-validated scores of one variant; `raw` runs seed-major, fold-minor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub metrics: MetricSummaries,
}

impl MetricsReport {
    pub fn from_runs(variant: &str, folds: usize, seeds: &[u64], runs: &[Metrics]) -> Self {
        let pick = |f: fn(&Metrics) -> f64| Summary::from_values(runs.iter().map(f).collect());
        MetricsReport {
            variant: variant.to_string(),
            folds,
            seeds: seeds.to_vec(),
            metrics: MetricSummaries {
                acc: pick(|m| m.acc),
                auc: pick(|m| m.auc),
                recall: pick(|m| m.recall),
                f1: pick(|m| m.f1),
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let m = compute_metrics(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 0.5).unwrap();
        assert_eq!(m, Metrics { acc: 1.0, auc: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn all_tied_scores_give_half_auc() {
        assert_eq!(auc_midrank(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(
            compute_metrics(&[0.1, 0.9], &[1, 1], 0.5),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn no_predicted_positives_gives_zero_f1() {
        let m = compute_metrics(&[0.1, 0.2, 0.3], &[0, 1, 1], 0.5).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!((m.acc - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn summary_uses_sample_std() {
        let s = Summary::from_values(vec![1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Summary::from_values(vec![0.7]).std, 0.0);
    }
}
