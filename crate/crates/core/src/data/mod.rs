//! Subject records, brain-graph construction, synthetic cohorts and splits.

mod io;
mod split;
mod synth;

pub use io::{
    ingest, load_manifest, read_matrix_csv, write_matrix_csv, write_synth_dataset, DatasetManifest,
    IngestReport, ManifestEntry, PayloadKind, SubjectDiagnostic,
};
pub use split::{split_kfold, FoldSplit, SplitSpec};
pub use synth::{synth_generate, SynthConfig, SynthDataset};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Raw per-subject measurement.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// `T × N` ROI signals, one column per ROI.
    TimeSeries(Tensor),
    /// `N × N` correlation matrix.
    Connectivity(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub payload: Payload,
    pub label: Option<u8>,
}

impl SubjectRecord {
    /// Connectivity matrix for this subject, computing Pearson correlations
    /// from time series when needed.
    pub fn connectivity(&self) -> Result<Tensor> {
        match &self.payload {
            Payload::TimeSeries(ts) => pearson_connectivity(ts),
            Payload::Connectivity(c) => {
                validate_connectivity(c)?;
                Ok(c.clone())
            }
        }
    }
}

/// How node features are derived from the connectivity matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Row `i` of the connectivity matrix (diagonal included) is ROI `i`'s feature.
    #[default]
    ConnectivityRow,
    /// One-hot ROI identity.
    Identity,
}

/// One subject as a weighted undirected graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrainGraph {
    pub id: String,
    pub adjacency: Tensor,
    pub features: Tensor,
    pub label: Option<u8>,
}

impl BrainGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.rows()
    }

    /// Same graph with a different adjacency matrix.
    pub fn with_adjacency(&self, adjacency: Tensor) -> BrainGraph {
        BrainGraph {
            id: self.id.clone(),
            adjacency,
            features: self.features.clone(),
            label: self.label,
        }
    }
}

pub(crate) fn validate_connectivity(c: &Tensor) -> Result<()> {
    let (n, m) = c.dims();
    if n != m {
        return Err(Error::Shape {
            op: "connectivity",
            lhs: vec![n, m],
            rhs: vec![m, n],
        });
    }
    if !c.is_symmetric(1e-9) {
        return Err(Error::Contract("connectivity matrix is not symmetric".into()));
    }
    for i in 0..n {
        if (c.get(i, i) - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "connectivity diagonal entry {i} is {} (expected 1)",
                c.get(i, i)
            )));
        }
    }
    if let Some(v) = c.data().iter().find(|v| !(v.abs() <= 1.0 + 1e-12)) {
        return Err(Error::Contract(format!(
            "connectivity entry {v} outside [-1, 1]"
        )));
    }
    Ok(())
}

/// Pairwise Pearson correlation between the columns of a `T × N` series.
pub fn pearson_connectivity(ts: &Tensor) -> Result<Tensor> {
    let (t, n) = ts.dims();
    if t < 3 {
        return Err(Error::Contract(format!(
            "time series needs at least 3 samples, got {t}"
        )));
    }
    let mut centered = vec![0.0; t * n];
    let mut norms = vec![0.0; n];
    for j in 0..n {
        let mean = (0..t).map(|i| ts.get(i, j)).sum::<f64>() / t as f64;
        let mut ss = 0.0;
        for i in 0..t {
            let d = ts.get(i, j) - mean;
            centered[i * n + j] = d;
            ss += d * d;
        }
        let norm = ss.sqrt();
        if !(norm > 1e-12 * (mean.abs().max(1.0) * (t as f64).sqrt())) {
            return Err(Error::DegenerateSignal { roi: j });
        }
        norms[j] = norm;
    }
    let mut out = Tensor::eye(n);
    for a in 0..n {
        for b in a + 1..n {
            let dot: f64 = (0..t).map(|i| centered[i * n + a] * centered[i * n + b]).sum();
            let r = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
            out.set(a, b, r);
            out.set(b, a, r);
        }
    }
    Ok(out)
}

/// Zero the diagonal, optionally keep only the top `keep_fraction` of
/// off-diagonal entries by magnitude, and attach node features.
pub fn build_graph(
    id: impl Into<String>,
    connectivity: &Tensor,
    label: Option<u8>,
    feature_mode: FeatureMode,
    keep_fraction: f64,
) -> Result<BrainGraph> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "sparsification fraction {keep_fraction} outside (0, 1]"
        )));
    }
    validate_connectivity(connectivity)?;
    let n = connectivity.rows();
    let mut adjacency = connectivity.clone();
    for i in 0..n {
        adjacency.set(i, i, 0.0);
    }
    if keep_fraction < 1.0 {
        let mut upper: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let keep = (keep_fraction * upper.len() as f64).round() as usize;
        // stable sort: ties keep row-major order
        upper.sort_by(|&(a, b), &(c, d)| {
            adjacency
                .get(c, d)
                .abs()
                .total_cmp(&adjacency.get(a, b).abs())
        });
        for &(i, j) in &upper[keep..] {
            adjacency.set(i, j, 0.0);
            adjacency.set(j, i, 0.0);
        }
    }
    let features = match feature_mode {
        FeatureMode::ConnectivityRow => connectivity.clone(),
        FeatureMode::Identity => Tensor::eye(n),
    };
    Ok(BrainGraph {
        id: id.into(),
        adjacency,
        features,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn series(t: usize, n: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed);
        Tensor::from_fn(t, n, |_, _| rng.normal())
    }

    #[test]
    fn identical_columns_correlate_fully() {
        let mut ts = series(10, 3, 1);
        for i in 0..10 {
            let v = ts.get(i, 0);
            ts.set(i, 1, v);
            ts.set(i, 2, -v);
        }
        let c = pearson_connectivity(&ts).unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((c.get(0, 2) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_names_the_roi() {
        let mut ts = series(8, 4, 2);
        for i in 0..8 {
            ts.set(i, 2, 3.5);
        }
        assert!(matches!(
            pearson_connectivity(&ts),
            Err(Error::DegenerateSignal { roi: 2 })
        ));
    }

    #[test]
    fn too_short_series_is_rejected() {
        assert!(pearson_connectivity(&series(2, 3, 3)).is_err());
    }

    #[test]
    fn keep_all_just_zeroes_the_diagonal() {
        let c = pearson_connectivity(&series(30, 6, 4)).unwrap();
        let g = build_graph("s", &c, Some(1), FeatureMode::ConnectivityRow, 1.0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 0.0 } else { c.get(i, j) };
                assert_eq!(g.adjacency.get(i, j), want);
            }
        }
        assert_eq!(g.features, c);
    }

    #[test]
    fn identity_features() {
        let c = pearson_connectivity(&series(30, 5, 5)).unwrap();
        let g = build_graph("s", &c, None, FeatureMode::Identity, 1.0).unwrap();
        assert_eq!(g.features, Tensor::eye(5));
    }

    #[test]
    fn keep_fraction_outside_unit_interval_is_config_error() {
        let c = Tensor::eye(3);
        for rho in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                build_graph("s", &c, None, FeatureMode::Identity, rho),
                Err(Error::Config(_))
            ));
        }
    }
}
