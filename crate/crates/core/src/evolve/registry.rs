//! The model registry: the closed set of backbones selection may return.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvolveError;

/// One selectable backbone model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub model_id: String,
    pub endpoint: String,
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// Ordered model list; the first entry doubles as the fallback default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Registry {
    entries: Vec<RegistryEntry>,
}

impl Registry {
    pub fn new(entries: Vec<RegistryEntry>) -> Self {
        Registry { entries }
    }

    /// Load a JSON array of entries.
    pub fn load(path: &Path) -> Result<Self, EvolveError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvolveError::Registry(format!("{}: {e}", path.display())))?;
        Registry::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, EvolveError> {
        let entries: Vec<RegistryEntry> =
            serde_json::from_str(text).map_err(|e| EvolveError::Registry(e.to_string()))?;
        Ok(Registry { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn get(&self, model_id: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.model_id == model_id)
    }

    /// Fallback winner when every proposal is dropped.
    pub fn default_model(&self) -> Option<&str> {
        self.entries.first().map(|e| e.model_id.as_str())
    }

    /// Comma-separated id list for prompt contexts.
    pub fn model_list(&self) -> String {
        self.entries
            .iter()
            .map(|e| e.model_id.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Map a free-form candidate name onto a registry id, by exact id or
    /// alias match after trimming and lowercasing.
    pub fn canonicalize(&self, candidate: &str) -> Option<String> {
        let needle = candidate.trim().to_lowercase();
        if needle.is_empty() {
            return None;
        }
        for entry in &self.entries {
            if entry.model_id.to_lowercase() == needle
                || entry.aliases.iter().any(|a| a.to_lowercase() == needle)
            {
                return Some(entry.model_id.clone());
            }
        }
        None
    }
}
