//! JSON checkpoint container.
//!
//! Parameters are written with shortest round-trip float formatting, so a
//! save/load cycle reproduces every bit of the parameter vector.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Network};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "tvseg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub specs: Vec<LayerSpec>,
    pub in_channels: usize,
    pub patch_size: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl From<&Network> for Checkpoint {
    fn from(net: &Network) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            specs: net.specs.clone(),
            in_channels: net.in_channels,
            patch_size: net.patch_size,
            num_classes: net.num_classes,
            seed: net.seed,
            params: net.params.clone(),
        }
    }
}

impl Checkpoint {
    pub fn into_network(self) -> Result<Network> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::format("checkpoint", format!("unknown format tag {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {}", self.version),
            ));
        }
        Network::from_parts(
            &self.specs,
            self.in_channels,
            self.patch_size,
            self.num_classes,
            self.seed,
            self.params,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let text = Checkpoint::from(net).to_json()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)?.into_network()
}
