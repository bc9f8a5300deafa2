//! Python bindings: configs, synthetic cohorts, estimators, model states
//! and the cross-validated pipeline. Matrices cross the boundary as nested
//! lists of floats.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use sambg_core::data::BrainGraph;
use sambg_core::eval::{self, Variant};
use sambg_core::masker::GroupLayout;
use sambg_core::rng::RngStream;
use sambg_core::tensor::Tensor;
use sambg_core::train::{self, ExperimentConfig, Stage, SCHEMA_VERSION};

create_exception!(sambg, SambgError, PyException);

fn err(e: sambg_core::Error) -> PyErr {
    SambgError::new_err(format!("{}: {e}", e.kind()))
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(err)
}

fn variant(tag: &str) -> PyResult<Variant> {
    Variant::from_str(tag).map_err(err)
}

/// Experiment configuration; defaults apply to every key not given.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json=None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => ExperimentConfig::from_json(text).map_err(err)?,
            None => ExperimentConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn schema_version(&self) -> u32 {
        self.inner.schema_version
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[setter]
    fn set_seeds(&mut self, v: Vec<u64>) {
        self.inner.seeds = v;
    }

    #[getter]
    fn folds(&self) -> usize {
        self.inner.folds
    }

    #[setter]
    fn set_folds(&mut self, v: usize) {
        self.inner.folds = v;
    }

    #[getter]
    fn labeled_fraction(&self) -> f64 {
        self.inner.labeled_fraction
    }

    #[setter]
    fn set_labeled_fraction(&mut self, v: f64) {
        self.inner.labeled_fraction = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(seeds={:?}, folds={}, labeled_fraction={})",
            self.inner.seeds, self.inner.folds, self.inner.labeled_fraction
        )
    }
}

/// Graphs of an experiment, loaded from a manifest or generated.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: eval::Dataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.graphs.len()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids()
    }

    #[getter]
    fn labels(&self) -> Vec<Option<u8>> {
        self.inner.labels()
    }

    /// Planted edges `(i, j)` of a synthetic cohort.
    #[getter]
    fn motif_edges(&self) -> Option<Vec<(usize, usize)>> {
        self.inner.motif_edges.clone()
    }

    fn adjacency(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.graph(index)?.adjacency.to_rows())
    }

    fn features(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.graph(index)?.features.to_rows())
    }
}

impl PyDataset {
    fn graph(&self, index: usize) -> PyResult<&BrainGraph> {
        self.inner
            .graphs
            .get(index)
            .ok_or_else(|| SambgError::new_err(format!("graph {index} outside 0..{}", self.inner.graphs.len())))
    }
}

/// Trained masker (when present), encoder and head.
#[pyclass(name = "ModelState")]
struct PyModelState {
    inner: train::ModelState,
}

#[pymethods]
impl PyModelState {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModelState {
            inner: train::ModelState::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModelState {
            inner: train::ModelState::from_json(text).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn stage(&self) -> &'static str {
        match self.inner.stage {
            Stage::Init => "init",
            Stage::Pretrain => "pretrain",
            Stage::Ssl => "ssl",
        }
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn has_masker(&self) -> bool {
        self.inner.masker.is_some()
    }

    /// Embedding of one graph as the probe sees it under `variant`.
    #[pyo3(signature = (adjacency, features, variant="full"))]
    fn embed(&self, adjacency: Vec<Vec<f64>>, features: Vec<Vec<f64>>, variant: &str) -> PyResult<Vec<f64>> {
        let g = BrainGraph {
            id: "input".into(),
            adjacency: tensor(adjacency)?,
            features: tensor(features)?,
            label: None,
        };
        let z = eval::embed(&g, &self.inner, self::variant(variant)?).map_err(err)?;
        Ok(z.into_data())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

#[pyfunction]
fn load_dataset(config: &PyConfig) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: eval::load_dataset(&config.inner).map_err(err)?,
    })
}

/// Pairwise Pearson correlation of the columns of a `T × N` series.
#[pyfunction]
fn pearson_connectivity(series: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let c = sambg_core::data::pearson_connectivity(&tensor(series)?).map_err(err)?;
    Ok(c.to_rows())
}

/// Matrix Rényi entropy (bits) of a trace-normalized PSD matrix.
#[pyfunction]
#[pyo3(signature = (matrix, alpha=2.0))]
fn renyi_entropy(matrix: Vec<Vec<f64>>, alpha: f64) -> PyResult<f64> {
    sambg_core::mi::renyi_entropy(&tensor(matrix)?, alpha).map_err(err)
}

/// Mutual information (bits) between two batches of equal size.
#[pyfunction]
#[pyo3(signature = (zx, zy, alpha=2.0))]
fn mutual_information(zx: Vec<Vec<f64>>, zy: Vec<Vec<f64>>, alpha: f64) -> PyResult<f64> {
    sambg_core::mi::mutual_information(&tensor(zx)?, &tensor(zy)?, alpha).map_err(err)
}

/// Canonical-correlation objective of two view embeddings.
#[pyfunction]
#[pyo3(signature = (za, zb, lam=1e-4))]
fn cca_loss(za: Vec<Vec<f64>>, zb: Vec<Vec<f64>>, lam: f64) -> PyResult<f64> {
    train::cca_loss(&tensor(za)?, &tensor(zb)?, lam).map_err(err)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::auc_midrank(&scores, &labels).map_err(err)
}

/// One (seed, fold) run; returns metrics, the trained state and the log rows.
#[pyfunction]
#[pyo3(signature = (config, variant="full", seed=0, fold=0))]
fn run_fold(
    py: Python<'_>,
    config: &PyConfig,
    variant: &str,
    seed: u64,
    fold: usize,
) -> PyResult<(Vec<(String, f64)>, PyModelState, Vec<(usize, String, f64, f64, f64, f64, f64)>)> {
    let v = self::variant(variant)?;
    let cfg = config.inner.clone();
    let out = py
        .detach(move || {
            let ds = eval::load_dataset(&cfg)?;
            let ctx = eval::RunContext::new(&ds, &cfg, v, seed, fold)?;
            eval::run_fold(&ctx)
        })
        .map_err(err)?;
    let m = out.metrics;
    let metrics = vec![
        ("acc".to_string(), m.acc),
        ("auc".to_string(), m.auc),
        ("recall".to_string(), m.recall),
        ("f1".to_string(), m.f1),
    ];
    let log = out
        .log
        .records
        .iter()
        .map(|r| (r.epoch, r.phase.as_str().to_string(), r.mi, r.ce, r.invariance, r.decorrelation, r.total))
        .collect();
    Ok((metrics, PyModelState { inner: out.state }, log))
}

/// Cross-validated run of one variant; returns the metrics JSON.
#[pyfunction]
#[pyo3(signature = (config, variant="full"))]
fn run_cv(py: Python<'_>, config: &PyConfig, variant: &str) -> PyResult<String> {
    let v = self::variant(variant)?;
    let cfg = config.inner.clone();
    py.detach(move || {
        let ds = eval::load_dataset(&cfg)?;
        eval::run_cv(&ds, &cfg, v)?.to_json()
    })
    .map_err(err)
}

/// Masker trained on every labeled graph; per class, the top edges as
/// `(class, rank, i, j, frequency, mean_weight)`.
#[pyfunction]
#[pyo3(signature = (config, seed=0))]
fn explain(py: Python<'_>, config: &PyConfig, seed: u64) -> PyResult<Vec<(u8, usize, usize, usize, f64, f64)>> {
    let cfg = config.inner.clone();
    let edges = py
        .detach(move || {
            let ds = eval::load_dataset(&cfg)?;
            let labeled: Vec<&BrainGraph> = ds.graphs.iter().filter(|g| g.label.is_some()).collect();
            let out = train::pretrain_ib(&labeled, &cfg, &RngStream::new(seed))?;
            let n = labeled.first().map_or(0, |g| g.node_count());
            let layout = GroupLayout::new(n, cfg.group_k(n), cfg.masker.grouping)?;
            eval::export_explanation(
                &labeled,
                &out.masker,
                &layout,
                cfg.masker.tau,
                cfg.explain.top_k,
                cfg.explain.samples,
                &RngStream::new(seed).split(0x6578_706c),
            )
        })
        .map_err(err)?;
    Ok(edges
        .into_iter()
        .map(|e| (e.class, e.rank, e.roi_i, e.roi_j, e.frequency, e.mean_weight))
        .collect())
}

/// Gradient checks of every op and objective as `(name, max_rel_error, passed)`.
#[pyfunction]
#[pyo3(signature = (points=10, seed=0))]
fn gradcheck(points: usize, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let checks = sambg_core::gradsuite::grad_check_suite(points, seed).map_err(err)?;
    Ok(checks
        .into_iter()
        .map(|c| {
            let ok = c.passed();
            (c.name, c.max_rel_error, ok)
        })
        .collect())
}

#[pymodule]
fn sambg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SCHEMA_VERSION", SCHEMA_VERSION)?;
    m.add("SambgError", m.py().get_type::<SambgError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModelState>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_connectivity, m)?)?;
    m.add_function(wrap_pyfunction!(renyi_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(cca_loss, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(run_fold, m)?)?;
    m.add_function(wrap_pyfunction!(run_cv, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
