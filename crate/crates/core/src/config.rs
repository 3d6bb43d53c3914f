//! TOML run configuration.
//!
//! One document mirrors every tunable section: controller budgets,
//! selection pipeline, sandbox limits, gateway behavior, and harness
//! settings. All fields default, so a partial file overrides only what it
//! names and an empty file is valid.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::evolve::SelectionConfig;
use crate::exec::ResourceLimits;
use crate::gateway::{BackendDescriptor, RetryPolicy};
use crate::Real;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write config `{path}`: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot render config: {0}")]
    Render(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Chat backend behavior shared by all agent roles.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub temperature: Real,
    pub max_output_tokens: u32,
    pub retry_max_attempts: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings {
            temperature: 0.1,
            max_output_tokens: 4096,
            retry_max_attempts: 3,
            retry_base_delay_ms: 1000,
        }
    }
}

impl GatewaySettings {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.retry_max_attempts,
            base_delay_ms: self.retry_base_delay_ms,
        }
    }
}

/// Benchmark-runner settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessSettings {
    pub parallelism: usize,
    pub default_language: String,
    /// Exclude infrastructure-errored tasks from the pass-rate denominator
    /// instead of counting them as failures.
    pub strict_infra: bool,
}

impl Default for HarnessSettings {
    fn default() -> Self {
        HarnessSettings {
            parallelism: 4,
            default_language: "python".to_string(),
            strict_infra: false,
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub controller: ControllerConfig,
    pub selection: SelectionConfig,
    pub limits: ResourceLimits,
    pub gateway: GatewaySettings,
    pub harness: HarnessSettings,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml()?).map_err(|source| ConfigError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.controller
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.selection
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.limits.wall_time_ms == 0 || self.limits.max_output_bytes == 0 {
            return Err(ConfigError::Invalid(
                "limits must allow nonzero time and output".to_string(),
            ));
        }
        if self.limits.max_processes != 1 {
            return Err(ConfigError::Invalid(format!(
                "max_processes is fixed at 1 in this engine, got {}",
                self.limits.max_processes
            )));
        }
        if !(0.0..=2.0).contains(&self.gateway.temperature) {
            return Err(ConfigError::Invalid(format!(
                "temperature must lie in [0, 2], got {}",
                self.gateway.temperature
            )));
        }
        if self.gateway.retry_max_attempts == 0 || self.gateway.max_output_tokens == 0 {
            return Err(ConfigError::Invalid(
                "gateway retry attempts and output budget must be nonzero".to_string(),
            ));
        }
        if self.harness.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be >= 1".to_string()));
        }
        Ok(())
    }

    /// A backend descriptor for `model_id` carrying this config's sampling
    /// settings.
    pub fn descriptor(&self, model_id: &str, endpoint: &str) -> BackendDescriptor {
        let mut descriptor = BackendDescriptor::new(model_id, endpoint);
        descriptor.temperature = self.gateway.temperature;
        descriptor.max_output_tokens = self.gateway.max_output_tokens;
        descriptor
    }
}
