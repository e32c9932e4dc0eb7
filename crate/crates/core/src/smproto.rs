// SPDX-License-Identifier: Apache-2.0

//! Command protocol of the security-manager trusted application.
//!
//! Each command takes its request as a JSON document in parameter 0
//! (direction In) and, where it answers, writes a JSON document into
//! parameter 1 (direction Out). `IssueStorageKey` is the exception: its single
//! Out parameter receives the raw 32 key bytes.

use serde::{Deserialize, Serialize};

use crate::access::{AccessDecision, AccessKind, Privilege, RegisterRange, Role};
use crate::audit::Outcome;
use crate::AssetId;

/// Identifier under which the security manager is registered in the secure world.
pub const SECURITY_MANAGER_TA: &str = "ecig.security-manager";

pub const CMD_ECHO: u32 = 0;
pub const CMD_VALIDATE_ADDRESS: u32 = 1;
pub const CMD_VALIDATE_KEY: u32 = 2;
pub const CMD_VERIFY_FIRMWARE_PROOF: u32 = 3;
pub const CMD_ISSUE_STORAGE_KEY: u32 = 4;
pub const CMD_SECURE_AUDIT: u32 = 5;
pub const CMD_DESCRIBE_ASSET: u32 = 6;

/// Handler return codes, numbered after the GlobalPlatform TEE codes.
pub mod code {
    pub const ACCESS_DENIED: u32 = 0xFFFF_0001;
    pub const BAD_FORMAT: u32 = 0xFFFF_0005;
    pub const BAD_PARAMETERS: u32 = 0xFFFF_0006;
    pub const ITEM_NOT_FOUND: u32 = 0xFFFF_0008;
    pub const NOT_SUPPORTED: u32 = 0xFFFF_000A;
    pub const STORAGE_NO_SPACE: u32 = 0xFFFF_3041;
    pub const GENERIC: u32 = 0xFFFF_0000;

    pub fn name(code: u32) -> &'static str {
        match code {
            ACCESS_DENIED => "access_denied",
            BAD_FORMAT => "bad_format",
            BAD_PARAMETERS => "bad_parameters",
            ITEM_NOT_FOUND => "item_not_found",
            NOT_SUPPORTED => "not_supported",
            STORAGE_NO_SPACE => "storage_no_space",
            _ => "generic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateAddressRequest {
    pub principal: String,
    pub asset_id: AssetId,
    pub addr: u16,
    pub length: u16,
    pub access: AccessKind,
    pub privilege: Privilege,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateKeyRequest {
    pub principal: String,
    /// Presented key, hex. Left as text so a malformed key is a denial
    /// rather than a decode error.
    pub key: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyProofRequest {
    pub principal: String,
    pub asset_id: AssetId,
    /// SHA-256 of the staged image, hex.
    pub image_digest: String,
    /// Install proof returned by the asset, hex.
    pub proof: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribeAssetRequest {
    pub principal: String,
    pub asset_id: AssetId,
}

/// Non-secret view of an asset policy handed to the normal world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetDescriptor {
    pub asset_id: AssetId,
    pub endpoint: String,
    pub unit_id: u8,
    pub register_space: RegisterRange,
    pub confidential_ranges: Vec<RegisterRange>,
}

impl AssetDescriptor {
    pub fn is_confidential(&self, addr: u16) -> bool {
        self.confidential_ranges
            .iter()
            .any(|r| r.contains(u32::from(addr)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecureAuditRequest {
    pub principal: String,
    pub activity: String,
    pub outcome: Option<Outcome>,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionResponse {
    pub decision: AccessDecision,
    /// Sequence number of the secure-world audit record for this decision.
    pub audit_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditAck {
    pub seq: u64,
}

/// Answer to `DescribeAsset`. `asset` is present iff the decision allows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribeAssetResponse {
    pub decision: AccessDecision,
    pub asset: Option<AssetDescriptor>,
    pub audit_seq: u64,
}
