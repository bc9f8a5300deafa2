use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Ssl,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Ssl => "ssl",
        }
    }
}

/// Epoch means of the loss terms; terms a phase does not use are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mi: f64,
    pub ce: f64,
    pub invariance: f64,
    pub decorrelation: f64,
    pub total: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.iter().rev().find(|r| r.phase == rec.phase) {
            if rec.epoch <= last.epoch {
                return Err(Error::Contract(format!(
                    "{} epoch {} logged after {}",
                    rec.phase.as_str(),
                    rec.epoch,
                    last.epoch
                )));
            }
        }
        let terms = [rec.mi, rec.ce, rec.invariance, rec.decorrelation, rec.total];
        if terms.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                phase: rec.phase.as_str(),
                epoch: rec.epoch,
                detail: format!("loss terms {terms:?}"),
            });
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn extend(&mut self, other: TrainLog) -> Result<()> {
        other.records.into_iter().try_for_each(|r| self.push(r))
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let mut log = TrainLog::default();
        for r in rd.deserialize() {
            log.push(r?)?;
        }
        Ok(log)
    }
}
