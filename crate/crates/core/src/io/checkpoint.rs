use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::SimConfig;
use crate::sim::{EpisodeOptions, EpisodeSnapshot};

pub const CHECKPOINT_FORMAT: &str = "ofdma-sched-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk checkpoint: a JSON document carrying the config it was taken
/// under, its hash, the episode options and the full episode state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Hex SHA-256 of the config's canonical JSON.
    pub config_hash: String,
    pub config: SimConfig,
    pub options: EpisodeOptions,
    pub snapshot: EpisodeSnapshot,
}

pub fn config_hash(config: &SimConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

impl Checkpoint {
    pub fn new(config: &SimConfig, options: EpisodeOptions, snapshot: EpisodeSnapshot) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(config),
            config: config.clone(),
            options,
            snapshot,
        }
    }

    /// Rejects foreign files, other versions and tampered configs, and,
    /// when `expected` is given, checkpoints taken under another config.
    pub fn verify(&self, expected: Option<&SimConfig>) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("not a checkpoint (format `{}`)", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if config_hash(&self.config) != self.config_hash {
            return Err(Error::Checkpoint("stored config does not match its hash".into()));
        }
        if let Some(c) = expected {
            let h = config_hash(c);
            if h != self.config_hash {
                return Err(Error::Checkpoint(format!(
                    "config hash {} differs from the checkpoint's {}",
                    &h[..12],
                    &self.config_hash[..12]
                )));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(checkpoint).map_err(|e| Error::parse(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads and verifies a checkpoint; see [`Checkpoint::verify`].
pub fn load_checkpoint(path: &Path, expected: Option<&SimConfig>) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    cp.verify(expected)?;
    Ok(cp)
}
