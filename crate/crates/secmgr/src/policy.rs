// SPDX-License-Identifier: Apache-2.0

//! Pure security checks: address windows, role keys and install proofs.

use std::collections::BTreeMap;

use ecig_core::access::{AccessDecision, AccessKind, DenyReason, Privilege, Role, SecretKey};
use ecig_core::smproto::AssetDescriptor;
use ecig_core::AssetId;
use hmac::{KeyInit, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::config::{AssetPolicy, RoleKeys};

type HmacSha256 = hmac::Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("unknown asset {0}")]
    UnknownAsset(AssetId),
    #[error("zero-length window")]
    ZeroLength,
}

impl PolicyError {
    /// The denial reported to the normal world for this error.
    pub fn as_denial(self) -> DenyReason {
        match self {
            PolicyError::UnknownAsset(_) => DenyReason::UnknownAsset,
            PolicyError::ZeroLength => DenyReason::ZeroLength,
        }
    }
}

/// Asset policies keyed by id.
#[derive(Debug, Clone, Default)]
pub struct PolicyBook {
    assets: BTreeMap<AssetId, AssetPolicy>,
}

impl PolicyBook {
    pub fn new(assets: impl IntoIterator<Item = AssetPolicy>) -> Self {
        Self {
            assets: assets.into_iter().map(|a| (a.asset_id, a)).collect(),
        }
    }

    pub fn get(&self, asset_id: AssetId) -> Result<&AssetPolicy, PolicyError> {
        self.assets.get(&asset_id).ok_or(PolicyError::UnknownAsset(asset_id))
    }

    pub fn describe(&self, asset_id: AssetId) -> Result<AssetDescriptor, PolicyError> {
        let a = self.get(asset_id)?;
        Ok(AssetDescriptor {
            asset_id: a.asset_id,
            endpoint: a.endpoint.clone(),
            unit_id: a.unit_id,
            register_space: a.register_space,
            confidential_ranges: a.confidential_ranges.clone(),
        })
    }

    /// Decides whether `[addr, addr + length - 1]` may be accessed at
    /// `privilege`. Read and write windows are judged alike.
    pub fn validate_address(
        &self,
        asset_id: AssetId,
        addr: u16,
        length: u16,
        _access: AccessKind,
        privilege: Privilege,
    ) -> Result<AccessDecision, PolicyError> {
        let policy = self.get(asset_id)?;
        if length == 0 {
            return Err(PolicyError::ZeroLength);
        }
        let start = u32::from(addr);
        let end = start + u32::from(length) - 1;
        if !policy.register_space.covers(start, end) {
            return Ok(AccessDecision::Deny(DenyReason::OutOfRange));
        }
        if privilege == Privilege::NonConfidentialOnly
            && policy.confidential_ranges.iter().any(|r| r.intersects(start, end))
        {
            return Ok(AccessDecision::Deny(DenyReason::ConfidentialOverlap));
        }
        Ok(AccessDecision::Allow)
    }

    /// Checks `proof == HMAC-SHA256(device_key, image_digest)`.
    pub fn verify_firmware_proof(
        &self,
        asset_id: AssetId,
        image_digest: &[u8],
        proof: &[u8],
    ) -> Result<AccessDecision, PolicyError> {
        let policy = self.get(asset_id)?;
        if image_digest.is_empty() {
            return Ok(AccessDecision::Deny(DenyReason::ZeroLength));
        }
        if image_digest.len() != 32 {
            return Ok(AccessDecision::Deny(DenyReason::ProofMismatch));
        }
        let mut mac = HmacSha256::new_from_slice(policy.device_key.as_bytes()).expect("HMAC takes any key length");
        mac.update(image_digest);
        Ok(match mac.verify_slice(proof) {
            Ok(()) => AccessDecision::Allow,
            Err(_) => AccessDecision::Deny(DenyReason::ProofMismatch),
        })
    }
}

/// Install proof an asset computes after committing an image.
pub fn install_proof(device_key: &SecretKey, image_digest: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(device_key.as_bytes()).expect("HMAC takes any key length");
    mac.update(image_digest);
    mac.finalize().into_bytes().into()
}

/// Checks a presented hex key against the stored key of `role`. A key that
/// does not decode is a denial. The comparison always spans all 32 bytes.
pub fn validate_key(keys: &RoleKeys, presented: &str, role: Role) -> AccessDecision {
    match SecretKey::from_hex(presented) {
        Ok(k) if k.ct_eq(keys.get(role)) => AccessDecision::Allow,
        _ => AccessDecision::Deny(DenyReason::BadKey),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecig_core::access::RegisterRange;

    fn fixture() -> PolicyBook {
        PolicyBook::new([AssetPolicy {
            asset_id: 1,
            endpoint: "127.0.0.1:1".into(),
            unit_id: 1,
            register_space: RegisterRange::new(0x0000, 0x03FF).unwrap(),
            confidential_ranges: vec![RegisterRange::new(0x0100, 0x01FF).unwrap()],
            device_key: SecretKey::from_bytes([7; 32]),
        }])
    }

    #[test]
    fn documented_examples() {
        let b = fixture();
        let nc = Privilege::NonConfidentialOnly;
        let r = AccessKind::Read;
        assert_eq!(b.validate_address(1, 0x0010, 4, r, nc), Ok(AccessDecision::Allow));
        assert_eq!(
            b.validate_address(1, 0x00FE, 4, r, nc),
            Ok(AccessDecision::Deny(DenyReason::ConfidentialOverlap))
        );
        assert_eq!(b.validate_address(1, 0x0100, 1, r, Privilege::Full), Ok(AccessDecision::Allow));
        assert_eq!(
            b.validate_address(1, 0x03FF, 2, r, Privilege::Full),
            Ok(AccessDecision::Deny(DenyReason::OutOfRange))
        );
        assert_eq!(b.validate_address(9, 0, 1, r, nc), Err(PolicyError::UnknownAsset(9)));
        assert_eq!(b.validate_address(1, 0, 0, r, nc), Err(PolicyError::ZeroLength));
    }

    #[test]
    fn window_past_u16_is_out_of_range() {
        let b = PolicyBook::new([AssetPolicy {
            register_space: RegisterRange::FULL,
            ..fixture().get(1).unwrap().clone()
        }]);
        assert_eq!(
            b.validate_address(1, 0xFFFF, 2, AccessKind::Write, Privilege::Full),
            Ok(AccessDecision::Deny(DenyReason::OutOfRange))
        );
    }
}
