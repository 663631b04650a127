//! Config files, metrics files and checkpoints.

mod checkpoint;
mod config;
mod metrics;

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{config_to_toml, parse_config, parse_config_str, write_config};
pub use metrics::{histogram_path, read_metrics, write_metrics, Format};
