use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_connectivity, Payload, SubjectRecord, SynthDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Timeseries,
    Connectivity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub kind: PayloadKind,
    #[serde(default)]
    pub label: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub atlas_n: usize,
    pub subjects: Vec<ManifestEntry>,
    #[serde(default)]
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubjectDiagnostic {
    pub id: String,
    pub kind: PayloadKind,
    pub rows: usize,
    pub cols: usize,
    pub label: Option<u8>,
    pub mean_abs_connectivity: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IngestReport {
    pub atlas_n: usize,
    pub subjects: Vec<SubjectDiagnostic>,
}

impl IngestReport {
    pub fn failures(&self) -> usize {
        self.subjects.iter().filter(|s| s.error.is_some()).count()
    }
}

/// Headerless CSV of numbers, one matrix row per line.
pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    detail: format!("line {}: {field:?}: {e}", line + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                detail: format!("line {}: non-finite value", line + 1),
            });
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|_| Error::Parse {
        path: path.display().to_string(),
        detail: "ragged rows".into(),
    })
}

pub fn write_matrix_csv(path: &Path, m: &Tensor) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for i in 0..m.rows() {
        writer.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_entry(base: &Path, atlas_n: usize, e: &ManifestEntry) -> Result<SubjectRecord> {
    if let Some(l) = e.label {
        if l > 1 {
            return Err(Error::Contract(format!("label {l} is not 0 or 1")));
        }
    }
    let m = read_matrix_csv(&resolve(base, &e.path))?;
    let payload = match e.kind {
        PayloadKind::Timeseries => {
            let (t, n) = m.dims();
            if n != atlas_n {
                return Err(Error::Contract(format!(
                    "time series has {n} ROIs, atlas has {atlas_n}"
                )));
            }
            if t < 3 {
                return Err(Error::Contract(format!("time series has only {t} samples")));
            }
            Payload::TimeSeries(m)
        }
        PayloadKind::Connectivity => {
            if m.dims() != (atlas_n, atlas_n) {
                return Err(Error::Contract(format!(
                    "connectivity is {:?}, atlas has {atlas_n} ROIs",
                    m.shape()
                )));
            }
            validate_connectivity(&m)?;
            Payload::Connectivity(m)
        }
    };
    Ok(SubjectRecord {
        id: e.id.clone(),
        payload,
        label: e.label,
    })
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Read a manifest and every subject it references; fails on the first bad subject.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, Vec<SubjectRecord>)> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let records = manifest
        .subjects
        .iter()
        .map(|e| load_entry(base, manifest.atlas_n, e))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}

/// Validate every subject of a manifest, collecting per-subject diagnostics
/// instead of stopping at the first failure.
pub fn ingest(path: &Path) -> Result<IngestReport> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let subjects = manifest
        .subjects
        .iter()
        .map(|e| {
            let mut d = SubjectDiagnostic {
                id: e.id.clone(),
                kind: e.kind,
                rows: 0,
                cols: 0,
                label: e.label,
                mean_abs_connectivity: None,
                error: None,
            };
            match load_entry(base, manifest.atlas_n, e).and_then(|r| {
                let shape = match &r.payload {
                    Payload::TimeSeries(t) | Payload::Connectivity(t) => t.dims(),
                };
                Ok((shape, r.connectivity()?))
            }) {
                Ok(((rows, cols), c)) => {
                    let n = c.rows();
                    d.rows = rows;
                    d.cols = cols;
                    let off: f64 = c.data().iter().map(|v| v.abs()).sum::<f64>() - n as f64;
                    d.mean_abs_connectivity = Some(off / (n * n.saturating_sub(1)).max(1) as f64);
                }
                Err(err) => d.error = Some(err.to_string()),
            }
            d
        })
        .collect();
    Ok(IngestReport {
        atlas_n: manifest.atlas_n,
        subjects,
    })
}

/// Write a synthetic cohort as connectivity CSVs plus `manifest.json` and
/// the planted edge list `motif.csv`.
pub fn write_synth_dataset(ds: &SynthDataset, dir: &Path, provenance: &str) -> Result<PathBuf> {
    let subject_dir = dir.join("subjects");
    fs::create_dir_all(&subject_dir)?;
    let mut entries = Vec::with_capacity(ds.graphs.len());
    for (g, c) in ds.graphs.iter().zip(&ds.connectivity) {
        let rel = format!("subjects/{}.csv", g.id);
        write_matrix_csv(&dir.join(&rel), c)?;
        entries.push(ManifestEntry {
            id: g.id.clone(),
            path: rel,
            kind: PayloadKind::Connectivity,
            label: g.label,
        });
    }
    let manifest = DatasetManifest {
        atlas_n: ds.graphs.first().map_or(0, |g| g.node_count()),
        subjects: entries,
        provenance: provenance.to_string(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;

    let mut w = csv::Writer::from_path(dir.join("motif.csv"))?;
    w.write_record(["roi_i", "roi_j"])?;
    for (i, j) in &ds.motif_edges {
        w.write_record([i.to_string(), j.to_string()])?;
    }
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = Tensor::from_fn(3, 4, |i, j| (i as f64 + 0.1).powf(j as f64 + 0.3) / 7.0);
        let p = dir.path().join("m.csv");
        write_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
    }

    #[test]
    fn ingest_reports_bad_subjects_without_stopping() {
        let dir = tempfile::tempdir().unwrap();
        write_matrix_csv(&dir.path().join("good.csv"), &Tensor::eye(3)).unwrap();
        let mut bad = Tensor::eye(3);
        bad.set(0, 1, 0.5);
        write_matrix_csv(&dir.path().join("bad.csv"), &bad).unwrap();
        let manifest = DatasetManifest {
            atlas_n: 3,
            subjects: vec![
                ManifestEntry {
                    id: "a".into(),
                    path: "good.csv".into(),
                    kind: PayloadKind::Connectivity,
                    label: Some(0),
                },
                ManifestEntry {
                    id: "b".into(),
                    path: "bad.csv".into(),
                    kind: PayloadKind::Connectivity,
                    label: Some(1),
                },
                ManifestEntry {
                    id: "c".into(),
                    path: "missing.csv".into(),
                    kind: PayloadKind::Timeseries,
                    label: None,
                },
            ],
            provenance: String::new(),
        };
        let mp = dir.path().join("manifest.json");
        fs::write(&mp, serde_json::to_string(&manifest).unwrap()).unwrap();
        let report = ingest(&mp).unwrap();
        assert_eq!(report.failures(), 2);
        assert!(report.subjects[0].error.is_none());
        assert!(report.subjects[1].error.as_deref().unwrap().contains("symmetric"));
        assert!(load_manifest(&mp).is_err());
    }
}
