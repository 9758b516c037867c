//! Self-describing JSON checkpoints. Floats are written in shortest
//! round-trip form and read back with exact parsing, so a save/load cycle
//! reproduces every weight bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iforest::IsolationForest;
use crate::model::IradModel;
use crate::trainer::TrainConfig;

pub const FORMAT: &str = "irad-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Epoch whose weights are stored.
    pub epoch: usize,
    pub train: TrainConfig,
    pub model: IradModel,
    /// Forest fitted on shared codes, when the detector was built.
    pub forest: Option<IsolationForest>,
}

impl Checkpoint {
    pub fn new(
        model: IradModel,
        train: TrainConfig,
        epoch: usize,
        forest: Option<IsolationForest>,
    ) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            seed: train.seed,
            epoch,
            train,
            model,
            forest,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != FORMAT {
            return Err(Error::Config(format!(
                "not a checkpoint: format {:?}",
                c.format
            )));
        }
        if c.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }
}
