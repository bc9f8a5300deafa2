use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BrainGraph;
use crate::error::{Error, Result};
use crate::masker::{selection_frequency, upper_pairs, GroupLayout, MaskerParams};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::train::ExperimentConfig;

use super::metrics::{Metrics, MetricsReport};
use super::pipeline::{cv_metrics, Dataset, Variant};

/// One report per requested variant, in request order.
pub fn run_ablation(dataset: &Dataset, cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<MetricsReport>> {
    variants
        .par_iter()
        .map(|&v| {
            let runs = cv_metrics(dataset, cfg, v)?;
            Ok(MetricsReport::from_runs(v.as_str(), cfg.folds, &cfg.seeds, &runs))
        })
        .collect()
}

pub fn write_ablation_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "variant", "acc_mean", "acc_std", "auc_mean", "auc_std", "recall_mean", "recall_std", "f1_mean", "f1_std",
    ])?;
    for r in reports {
        let m = &r.metrics;
        let mut row = vec![r.variant.clone()];
        for s in [&m.acc, &m.auc, &m.recall, &m.f1] {
            row.push(s.mean.to_string());
            row.push(s.std.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Hyperparameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    Lambda,
    LabeledFraction,
    Epsilon,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Lambda => "lambda",
            SweepParam::LabeledFraction => "labeled_fraction",
            SweepParam::Epsilon => "epsilon",
        }
    }

    /// Copy of `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        match self {
            SweepParam::Beta => c.pretrain.beta = value,
            SweepParam::Lambda => c.ssl.lambda = value,
            SweepParam::LabeledFraction => c.labeled_fraction = value,
            SweepParam::Epsilon => c.ssl.epsilon = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::Beta,
            SweepParam::Lambda,
            SweepParam::LabeledFraction,
            SweepParam::Epsilon,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown sweep parameter '{s}'")))
    }
}

/// Fold-mean scores of one seed at one grid value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param_value: f64,
    pub seed: u64,
    pub acc: f64,
    pub auc: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Cross-validated runs of `variant` at every grid value and seed.
pub fn sweep(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    param: SweepParam,
    grid: &[f64],
    variant: Variant,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let points: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    points
        .par_iter()
        .map(|&(value, seed)| {
            let mut c = param.apply(cfg, value)?;
            c.seeds = vec![seed];
            let runs = cv_metrics(dataset, &c, variant)?;
            let mean = |f: fn(&Metrics) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
            Ok(SweepRow {
                param_value: value,
                seed,
                acc: mean(|m| m.acc),
                auc: mean(|m| m.auc),
                recall: mean(|m| m.recall),
                f1: mean(|m| m.f1),
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One highly selected connection of a class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainedEdge {
    pub class: u8,
    pub rank: usize,
    pub roi_i: usize,
    pub roi_j: usize,
    pub frequency: f64,
    pub mean_weight: f64,
}

/// Upper-triangle edges sorted by descending `freq`, row-major on ties.
pub fn ranked_edges(freq: &Tensor) -> Vec<(usize, usize, f64)> {
    let mut edges: Vec<(usize, usize, f64)> = upper_pairs(freq.rows())
        .into_iter()
        .map(|(i, j)| (i, j, freq.get(i, j)))
        .collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2));
    edges
}

/// Per class, the `top_k` most frequently selected edges with their
/// selection frequency and mean connectivity weight.
pub fn export_explanation(
    graphs: &[&BrainGraph],
    params: &MaskerParams,
    layout: &GroupLayout,
    tau: f64,
    top_k: usize,
    samples: usize,
    rng: &RngStream,
) -> Result<Vec<ExplainedEdge>> {
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    let e = layout.edge_count();
    let k = if top_k > e {
        warn!("top_k {top_k} exceeds the {e} available edges; clamping");
        e
    } else {
        top_k
    };
    let mut out = Vec::new();
    for class in 0..2u8 {
        let members: Vec<&BrainGraph> = graphs.iter().copied().filter(|g| g.label == Some(class)).collect();
        if members.is_empty() {
            warn!("no graphs of class {class} to explain");
            continue;
        }
        let freq = selection_frequency(params, layout, tau, &members, samples, &mut rng.split(class as u64))?;
        for (rank, (i, j, f)) in ranked_edges(&freq).into_iter().take(k).enumerate() {
            let mean_weight = members.iter().map(|g| g.adjacency.get(i, j)).sum::<f64>() / members.len() as f64;
            out.push(ExplainedEdge {
                class,
                rank: rank + 1,
                roi_i: i,
                roi_j: j,
                frequency: f,
                mean_weight,
            });
        }
    }
    Ok(out)
}

pub fn write_explanation_csv(path: &Path, edges: &[ExplainedEdge]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in edges {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}
