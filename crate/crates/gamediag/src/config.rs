use std::path::{Path, PathBuf};

use gamediag_core::{Config, ScreenProfile};
use serde::{Deserialize, Serialize};

/// A child known to the service before any trial arrives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildSpec {
    pub child_id: String,
    #[serde(default)]
    pub display_name: String,
    /// Display the child plays on; the pipeline default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen: Option<ScreenProfile>,
}

/// The service configuration document: every pipeline tunable plus where
/// logs live and which port to bind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    #[serde(flatten)]
    pub core: Config,
    pub data_dir: PathBuf,
    pub port: u16,
    pub children: Vec<ChildSpec>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { core: Config::default(), data_dir: PathBuf::from("data"), port: 8080, children: Vec::new() }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
