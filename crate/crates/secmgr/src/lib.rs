// SPDX-License-Identifier: Apache-2.0

//! Security manager (SM): the trusted application behind every
//! security-relevant decision the gateway makes, plus the glue that hosts it
//! in an emulated secure world.

pub mod config;
pub mod manager;
pub mod policy;
pub mod sealed;

use std::path::Path;
use std::sync::Arc;

use ecig_core::audit::{AuditError, AuditLog, World};
use ecig_core::clock::Clock;
use ecig_worldlink::server::{AttestError, Attestor, SecureWorld};
use ecig_worldlink::{Measurement, MeasurementMode};
use thiserror::Error;

pub use config::{AssetPolicy, ConfigError, RoleKeys, SwConfig};
pub use manager::SecurityManager;
pub use policy::{install_proof, validate_key, PolicyBook, PolicyError};
pub use sealed::SealedKey;

#[derive(Debug, Error)]
pub enum SecmgrError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("secure audit log: {0}")]
    Audit(#[from] AuditError),
    #[error("attestation: {0}")]
    Attest(#[from] AttestError),
    #[error("security manager create entry point failed with {0:#010x}")]
    Create(u32),
}

/// Builds a secure world with the security manager installed. The caller
/// decides where to listen.
pub fn build_world(cfg: &SwConfig, clock: Arc<dyn Clock>) -> Result<Arc<SecureWorld>, SecmgrError> {
    cfg.check()?;
    std::fs::create_dir_all(&cfg.storage_dir).map_err(AuditError::Io)?;
    let attestor = Attestor::open(cfg.attestation_store(), cfg.mode, cfg.hash_algorithm)?;
    let mut audit = AuditLog::open(cfg.audit_log(), World::Secure, clock)?;
    if let Some(limit) = cfg.audit_capacity {
        audit = audit.with_capacity(limit);
    }
    let audit = Arc::new(audit);
    let sm = SecurityManager::new(
        PolicyBook::new(cfg.assets.clone()),
        cfg.keys.clone(),
        SealedKey::new(cfg.storage_key_file()),
        audit.clone(),
    );
    let world = Arc::new(SecureWorld::new(attestor, audit));
    world.install(Box::new(sm)).map_err(SecmgrError::Create)?;
    Ok(world)
}

/// Records the reference digest of `image` for `ta_id` without starting a
/// server.
pub fn train_offline(cfg: &SwConfig, ta_id: &str, image: &Path) -> Result<Measurement, SecmgrError> {
    let mut attestor = Attestor::open(cfg.attestation_store(), MeasurementMode::Training, cfg.hash_algorithm)?;
    Ok(attestor.train(ta_id, image)?)
}
