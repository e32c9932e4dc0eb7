// SPDX-License-Identifier: Apache-2.0

//! Fleet configuration (TOML).
//!
//! ```toml
//! [[assets]]
//! asset_id = 1
//! listen = "127.0.0.1:15020"
//! device_key = "<64 hex>"
//! illegal_ranges = [[2048, 4095]]
//!
//! [[assets.preload]]
//! addr = 16
//! words = [0xBEEF, 0x0001]
//! ```

use std::path::Path;

use ecig_core::access::{RegisterRange, SecretKey};
use ecig_core::AssetId;
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preload {
    pub addr: u16,
    pub words: Vec<u16>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimAssetConfig {
    pub asset_id: AssetId,
    /// `host:port`; port 0 picks a free port.
    pub listen: String,
    #[serde(default = "default_unit")]
    pub unit_id: u8,
    pub device_key: SecretKey,
    #[serde(default)]
    pub illegal_ranges: Vec<RegisterRange>,
    #[serde(default)]
    pub preload: Vec<Preload>,
}

fn default_unit() -> u8 {
    1
}

impl SimAssetConfig {
    pub fn new(asset_id: AssetId, listen: impl Into<String>, device_key: SecretKey) -> Self {
        Self {
            asset_id,
            listen: listen.into(),
            unit_id: 1,
            device_key,
            illegal_ranges: Vec::new(),
            preload: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FleetConfig {
    #[serde(default)]
    pub assets: Vec<SimAssetConfig>,
}

impl FleetConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
    }
}
