use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::config::ProbeConfig;

use super::metrics::{compute_metrics, Metrics};

/// Held-out embeddings whose labels are only readable by metric computation.
#[derive(Clone, Debug)]
pub struct HeldOut {
    embeddings: Tensor,
    labels: Vec<u8>,
}

impl HeldOut {
    pub fn new(embeddings: Tensor, labels: Vec<u8>) -> Result<Self> {
        if embeddings.rows() != labels.len() {
            return Err(Error::Contract(format!(
                "{} embeddings for {} labels",
                embeddings.rows(),
                labels.len()
            )));
        }
        Ok(HeldOut { embeddings, labels })
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Score `probabilities` (aligned with the embeddings) against the hidden labels.
    pub fn evaluate(&self, probabilities: &[f64], threshold: f64) -> Result<Metrics> {
        compute_metrics(probabilities, &self.labels, threshold)
    }
}

/// Logistic regression on standardized embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(x: f64) -> f64 {
    crate::tensor::sigmoid(x)
}

impl LogisticProbe {
    fn standardized(&self, z: &Tensor, i: usize) -> impl Iterator<Item = f64> + '_ {
        let row: Vec<f64> = z.row(i).to_vec();
        row.into_iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
    }

    fn logit(&self, z: &Tensor, i: usize) -> f64 {
        self.standardized(z, i)
            .zip(&self.weights)
            .map(|(x, w)| x * w)
            .sum::<f64>()
            + self.bias
    }

    /// Probability of class 1 for each row of `z`.
    pub fn predict(&self, z: &Tensor) -> Result<Vec<f64>> {
        if z.cols() != self.weights.len() {
            return Err(Error::Contract(format!(
                "probe expects width {}, got {}",
                self.weights.len(),
                z.cols()
            )));
        }
        Ok((0..z.rows()).map(|i| sigmoid(self.logit(z, i))).collect())
    }

    fn accuracy(&self, z: &Tensor, y: &[u8], threshold: f64) -> f64 {
        let hits = (0..z.rows())
            .filter(|&i| (sigmoid(self.logit(z, i)) >= threshold) == (y[i] == 1))
            .count();
        hits as f64 / y.len().max(1) as f64
    }
}

fn require_both_classes(y: &[u8], what: &str) -> Result<()> {
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::Split(format!("{what} split holds a single class")));
    }
    Ok(())
}

/// Full-batch gradient descent on L2-regularized logistic loss; the
/// parameters with the best validation accuracy (earliest on ties) are kept.
pub fn probe_train(
    train: &Tensor,
    train_y: &[u8],
    val: &Tensor,
    val_y: &[u8],
    cfg: &ProbeConfig,
) -> Result<LogisticProbe> {
    if train.rows() != train_y.len() || val.rows() != val_y.len() {
        return Err(Error::Contract("probe inputs and labels differ in length".into()));
    }
    require_both_classes(train_y, "probe training")?;
    let (n, d) = train.dims();
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for j in 0..d {
        let m = (0..n).map(|i| train.get(i, j)).sum::<f64>() / n as f64;
        let v = (0..n).map(|i| (train.get(i, j) - m).powi(2)).sum::<f64>() / n as f64;
        mean[j] = m;
        scale[j] = (v + 1e-12).sqrt();
    }
    let mut probe = LogisticProbe {
        mean,
        scale,
        weights: vec![0.0; d],
        bias: 0.0,
    };
    let xs: Vec<Vec<f64>> = (0..n).map(|i| probe.standardized(train, i).collect()).collect();
    let mut best = probe.clone();
    let mut best_acc = f64::NEG_INFINITY;
    for epoch in 1..=cfg.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(train_y) {
            let z: f64 = x.iter().zip(&probe.weights).map(|(a, w)| a * w).sum::<f64>() + probe.bias;
            let r = sigmoid(z) - f64::from(y);
            gw.iter_mut().zip(x).for_each(|(g, a)| *g += r * a);
            gb += r;
        }
        for (w, g) in probe.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * (g / n as f64 + cfg.l2 * *w);
        }
        probe.bias -= cfg.lr * gb / n as f64;
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let acc = if val_y.is_empty() {
                probe.accuracy(train, train_y, cfg.threshold)
            } else {
                probe.accuracy(val, val_y, cfg.threshold)
            };
            if acc > best_acc {
                best_acc = acc;
                best = probe.clone();
            }
        }
    }
    Ok(best)
}
