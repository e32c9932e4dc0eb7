// SPDX-License-Identifier: Apache-2.0

//! Secure-world configuration file (TOML).
//!
//! ```toml
//! socket = "/run/ecig/sw.sock"
//! mode = "normal"              # or "training"
//! storage_dir = "/var/lib/ecig/sw"
//! hash_algorithm = "sha1"      # or "sha256"
//!
//! [keys]
//! third_party = "<64 hex>"
//! engineer = "<64 hex>"
//! administrator = "<64 hex>"
//! scheduler = "<64 hex>"
//!
//! [[assets]]
//! asset_id = 1
//! endpoint = "127.0.0.1:1502"
//! register_space = [0, 1023]
//! confidential_ranges = [[256, 511]]
//! device_key = "<64 hex>"
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ecig_core::access::{RegisterRange, Role, SecretKey};
use ecig_core::AssetId;
use ecig_worldlink::{HashAlgorithm, MeasurementMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("asset {0}: {1}")]
    BadPolicy(AssetId, String),
    #[error("asset id {0} configured twice")]
    DuplicateAsset(AssetId),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssetPolicy {
    pub asset_id: AssetId,
    /// `host:port` of the asset's Modbus-TCP service.
    pub endpoint: String,
    #[serde(default = "default_unit")]
    pub unit_id: u8,
    pub register_space: RegisterRange,
    #[serde(default)]
    pub confidential_ranges: Vec<RegisterRange>,
    pub device_key: SecretKey,
}

fn default_unit() -> u8 {
    1
}

impl AssetPolicy {
    /// Checks that confidential ranges are disjoint and lie inside the
    /// register space.
    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| ConfigError::BadPolicy(self.asset_id, m);
        if self.asset_id == 0 {
            return Err(bad("asset id must be positive".into()));
        }
        for (i, r) in self.confidential_ranges.iter().enumerate() {
            if !self.register_space.covers(r.lo().into(), r.hi().into()) {
                return Err(bad(format!("confidential range {r:?} outside register space")));
            }
            if let Some(o) = self.confidential_ranges[i + 1..].iter().find(|o| o.overlaps(r)) {
                return Err(bad(format!("confidential ranges {r:?} and {o:?} overlap")));
            }
        }
        Ok(())
    }
}

/// One key per role.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleKeys {
    pub third_party: SecretKey,
    pub engineer: SecretKey,
    pub administrator: SecretKey,
    pub scheduler: SecretKey,
}

impl RoleKeys {
    pub fn get(&self, role: Role) -> &SecretKey {
        match role {
            Role::ThirdParty => &self.third_party,
            Role::Engineer => &self.engineer,
            Role::Administrator => &self.administrator,
            Role::Scheduler => &self.scheduler,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwConfig {
    pub socket: PathBuf,
    pub mode: MeasurementMode,
    pub storage_dir: PathBuf,
    #[serde(default)]
    pub hash_algorithm: HashAlgorithm,
    /// Upper bound on the secure audit log, in bytes.
    #[serde(default)]
    pub audit_capacity: Option<u64>,
    pub keys: RoleKeys,
    #[serde(default)]
    pub assets: Vec<AssetPolicy>,
}

impl SwConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let cfg: SwConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for a in &self.assets {
            a.check()?;
            if !seen.insert(a.asset_id) {
                return Err(ConfigError::DuplicateAsset(a.asset_id));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn attestation_store(&self) -> PathBuf {
        self.storage_dir.join("attestation.json")
    }

    pub fn audit_log(&self) -> PathBuf {
        self.storage_dir.join("sw-audit.log")
    }

    pub fn storage_key_file(&self) -> PathBuf {
        self.storage_dir.join("storage.key")
    }
}
