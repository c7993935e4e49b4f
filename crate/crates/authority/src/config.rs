//! Policy files.

use std::path::Path;

use thiserror::Error;
use vpki_core::policy::PolicyError;
use vpki_core::DomainPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}: {1}")]
    Parse(String, serde_json::Error),
    #[error("{0}: {1}")]
    Invalid(String, PolicyError),
}

/// Reads a JSON policy. Missing keys take their defaults; unknown keys are
/// an error.
pub fn load_policy(path: &Path) -> Result<DomainPolicy, ConfigError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(name.clone(), e))?;
    parse_policy(&text).map_err(|e| match e {
        ConfigError::Parse(_, err) => ConfigError::Parse(name.clone(), err),
        ConfigError::Invalid(_, err) => ConfigError::Invalid(name.clone(), err),
        other => other,
    })
}

pub fn parse_policy(text: &str) -> Result<DomainPolicy, ConfigError> {
    let policy: DomainPolicy = serde_json::from_str(text).map_err(|e| ConfigError::Parse(String::new(), e))?;
    policy.validate().map_err(|e| ConfigError::Invalid(String::new(), e))?;
    Ok(policy)
}
