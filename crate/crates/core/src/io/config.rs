use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SimConfig;

/// Reads and validates a TOML config. Missing keys take the reference
/// preset's values; unknown keys are rejected.
pub fn parse_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path)
}

/// As [`parse_config`], with `origin` used only in error messages.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<SimConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::parse(origin, e))?;
    let config: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let mut message = inner.message().trim_end().to_string();
        if let Some(span) = inner.span() {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            message = format!("{message} (line {line})");
        }
        if path == "." || path.is_empty() {
            Error::parse(origin, message)
        } else {
            Error::parse(origin, format!("{path}: {message}"))
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn config_to_toml(config: &SimConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
}

pub fn write_config(config: &SimConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config_to_toml(config)?).map_err(|e| Error::io(path, e))
}
