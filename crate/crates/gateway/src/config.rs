// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::time::Duration;

use ecig_core::access::SecretKey;
use ecig_core::AssetId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("gateway configuration {path}: {reason}")]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_store_interval")]
    pub store_interval_secs: u64,
    #[serde(default = "default_profile_interval")]
    pub profile_interval_secs: u64,
    /// Assets snapshotted by the periodic store activity.
    #[serde(default)]
    pub assets: Vec<AssetId>,
    /// The scheduler's own role key.
    pub key: Option<SecretKey>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            store_interval_secs: default_store_interval(),
            profile_interval_secs: default_profile_interval(),
            assets: Vec::new(),
            key: None,
        }
    }
}

fn default_store_interval() -> u64 {
    60
}
fn default_profile_interval() -> u64 {
    300
}
fn default_ttl() -> u64 {
    3600
}
fn default_cap() -> u64 {
    16 * 1024 * 1024
}
fn default_modbus_timeout() -> u64 {
    2000
}
fn default_profile_window() -> u64 {
    300
}
fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Unix socket of the secure world.
    pub sw_socket: PathBuf,
    /// Image measured at session open. Defaults to the running executable.
    pub image: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub users_file: PathBuf,
    /// Secure-world audit log, read when building threat profiles.
    pub sw_audit_log: Option<PathBuf>,
    #[serde(default = "default_ttl")]
    pub token_ttl_secs: u64,
    #[serde(default = "default_cap")]
    pub firmware_cap_bytes: u64,
    #[serde(default = "default_modbus_timeout")]
    pub modbus_timeout_ms: u64,
    #[serde(default = "default_profile_window")]
    pub profile_window_secs: u64,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
}

impl GatewayConfig {
    /// A configuration with every optional field at its default.
    pub fn new(sw_socket: impl Into<PathBuf>, data_dir: impl Into<PathBuf>, users_file: impl Into<PathBuf>) -> Self {
        Self {
            listen: default_listen(),
            sw_socket: sw_socket.into(),
            image: None,
            data_dir: data_dir.into(),
            users_file: users_file.into(),
            sw_audit_log: None,
            token_ttl_secs: default_ttl(),
            firmware_cap_bytes: default_cap(),
            modbus_timeout_ms: default_modbus_timeout(),
            profile_window_secs: default_profile_window(),
            scheduler: SchedulerConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let err = |reason: String| ConfigError {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        cfg.check().map_err(err)?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.token_ttl_secs == 0 {
            return Err("token_ttl_secs must be positive".into());
        }
        if self.modbus_timeout_ms == 0 {
            return Err("modbus_timeout_ms must be positive".into());
        }
        if self.scheduler.enabled && self.scheduler.key.is_none() {
            return Err("an enabled scheduler needs its role key".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn staging_dir(&self) -> PathBuf {
        self.data_dir.join("staging")
    }

    pub fn token_ttl(&self) -> Duration {
        Duration::from_secs(self.token_ttl_secs)
    }

    pub fn modbus_timeout(&self) -> Duration {
        Duration::from_millis(self.modbus_timeout_ms)
    }

    pub fn profile_window(&self) -> Duration {
        Duration::from_secs(self.profile_window_secs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg: GatewayConfig = toml::from_str(
            r#"
            sw_socket = "/tmp/sw.sock"
            data_dir = "/tmp/data"
            users_file = "/tmp/users.toml"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.token_ttl_secs, 3600);
        assert_eq!(cfg.firmware_cap_bytes, 16 * 1024 * 1024);
        assert_eq!(cfg.modbus_timeout(), Duration::from_secs(2));
        assert_eq!(cfg.scheduler.store_interval_secs, 60);
        assert_eq!(cfg.scheduler.profile_interval_secs, 300);
        let back: GatewayConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn enabled_scheduler_needs_key() {
        let mut cfg = GatewayConfig::new("/s", "/d", "/u");
        cfg.scheduler.enabled = true;
        assert!(cfg.check().is_err());
        cfg.scheduler.key = Some(SecretKey::from_bytes([1; 32]));
        assert!(cfg.check().is_ok());
    }
}
