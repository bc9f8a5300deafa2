use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{ClassifierHead, EncoderParams};
use crate::error::{Error, Result};
use crate::masker::{GroupLayout, MaskerCheckpoint, MaskerParams};

pub const STATE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Pretrain,
    Ssl,
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelState {
    pub version: u32,
    pub stage: Stage,
    pub epoch: usize,
    pub masker: Option<MaskerCheckpoint>,
    pub encoder: EncoderParams,
    pub head: Option<ClassifierHead>,
}

impl ModelState {
    pub fn new(
        stage: Stage,
        epoch: usize,
        masker: Option<(&MaskerParams, &GroupLayout, f64)>,
        encoder: &EncoderParams,
        head: Option<&ClassifierHead>,
    ) -> Self {
        ModelState {
            version: STATE_VERSION,
            stage,
            epoch,
            masker: masker.map(|(p, l, tau)| MaskerCheckpoint::new(p, l, tau)),
            encoder: encoder.clone(),
            head: head.cloned(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: ModelState = serde_json::from_str(text)?;
        if s.version != STATE_VERSION {
            return Err(Error::Contract(format!(
                "model state version {} (expected {STATE_VERSION})",
                s.version
            )));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    /// Masker parameters, layout and temperature, if the state has a masker.
    pub fn masker_parts(&self) -> Result<Option<(MaskerParams, GroupLayout, f64)>> {
        self.masker
            .as_ref()
            .map(|c| Ok((c.params()?, c.layout()?, c.tau)))
            .transpose()
    }
}
