// SPDX-License-Identifier: Apache-2.0

//! Access-control vocabulary: roles, privilege levels, register windows and
//! the decisions the security manager hands back.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use subtle::ConstantTimeEq;
use thiserror::Error;

/// Role bound to an authenticated principal and to one key in the key store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ThirdParty,
    Engineer,
    Administrator,
    Scheduler,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::ThirdParty,
        Role::Engineer,
        Role::Administrator,
        Role::Scheduler,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::ThirdParty => "third_party",
            Role::Engineer => "engineer",
            Role::Administrator => "administrator",
            Role::Scheduler => "scheduler",
        }
    }

    /// Privilege level a role may request from the address validator.
    pub fn privilege(self) -> Privilege {
        match self {
            Role::ThirdParty => Privilege::NonConfidentialOnly,
            Role::Engineer | Role::Administrator | Role::Scheduler => Privilege::Full,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| UnknownRole(s.to_owned()))
    }
}

#[derive(Debug, Error)]
#[error("unknown role `{0}`")]
pub struct UnknownRole(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Privilege {
    NonConfidentialOnly,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Read,
    Write,
}

/// Why a request was refused. Every denial carries exactly one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    ConfidentialOverlap,
    OutOfRange,
    BadKey,
    RoleForbidden,
    ZeroLength,
    UnknownAsset,
    ProofMismatch,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::ConfidentialOverlap => "confidential_overlap",
            DenyReason::OutOfRange => "out_of_range",
            DenyReason::BadKey => "bad_key",
            DenyReason::RoleForbidden => "role_forbidden",
            DenyReason::ZeroLength => "zero_length",
            DenyReason::UnknownAsset => "unknown_asset",
            DenyReason::ProofMismatch => "proof_mismatch",
        }
    }
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Verdict of a security-manager check. A denial without a reason cannot be
/// represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum AccessDecision {
    Allow,
    Deny(DenyReason),
}

impl AccessDecision {
    pub fn is_allow(self) -> bool {
        matches!(self, AccessDecision::Allow)
    }

    pub fn reason(self) -> Option<DenyReason> {
        match self {
            AccessDecision::Allow => None,
            AccessDecision::Deny(r) => Some(r),
        }
    }
}

/// Inclusive range of 16-bit register addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegisterRange {
    lo: u16,
    hi: u16,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("register range lower bound {lo:#06x} exceeds upper bound {hi:#06x}")]
pub struct InvertedRange {
    pub lo: u16,
    pub hi: u16,
}

impl RegisterRange {
    pub fn new(lo: u16, hi: u16) -> Result<Self, InvertedRange> {
        if lo > hi {
            return Err(InvertedRange { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub const FULL: RegisterRange = RegisterRange { lo: 0, hi: u16::MAX };

    pub fn lo(&self) -> u16 {
        self.lo
    }

    pub fn hi(&self) -> u16 {
        self.hi
    }

    /// Number of addresses covered.
    pub fn len(&self) -> u32 {
        u32::from(self.hi) - u32::from(self.lo) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= u32::from(self.lo) && addr <= u32::from(self.hi)
    }

    /// Whether `[start, end]` (inclusive, possibly past 0xFFFF) lies wholly
    /// inside this range.
    pub fn covers(&self, start: u32, end: u32) -> bool {
        start >= u32::from(self.lo) && end <= u32::from(self.hi)
    }

    /// Whether `[start, end]` shares at least one address with this range.
    pub fn intersects(&self, start: u32, end: u32) -> bool {
        start <= u32::from(self.hi) && end >= u32::from(self.lo)
    }

    pub fn overlaps(&self, other: &RegisterRange) -> bool {
        self.intersects(u32::from(other.lo), u32::from(other.hi))
    }

    pub fn iter(&self) -> impl Iterator<Item = u16> {
        self.lo..=self.hi
    }
}

impl fmt::Display for RegisterRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:#06x}, {:#06x}]", self.lo, self.hi)
    }
}

// Serialized as a two-element array `[lo, hi]`, which reads naturally in
// configuration files.
impl Serialize for RegisterRange {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.lo, self.hi].serialize(s)
    }
}

impl<'de> Deserialize<'de> for RegisterRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [lo, hi] = <[u16; 2]>::deserialize(d)?;
        RegisterRange::new(lo, hi).map_err(serde::de::Error::custom)
    }
}

/// A 32-byte secret: role keys, device keys, storage keys.
///
/// Equality is constant time over the full length; `Debug` never prints the
/// bytes.
#[derive(Clone, Copy)]
pub struct SecretKey([u8; 32]);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyFormatError {
    #[error("key must be 64 hex characters, got {0}")]
    BadLength(usize),
    #[error("key is not valid hex")]
    BadHex,
}

impl SecretKey {
    pub const LEN: usize = 32;

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyFormatError> {
        if s.len() != 2 * Self::LEN {
            return Err(KeyFormatError::BadLength(s.len()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| KeyFormatError::BadHex)?;
        Ok(Self(out))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Compares every byte regardless of where the first mismatch occurs.
    pub fn ct_eq(&self, other: &SecretKey) -> bool {
        self.0.ct_eq(&other.0).into()
    }
}

impl PartialEq for SecretKey {
    fn eq(&self, other: &Self) -> bool {
        self.ct_eq(other)
    }
}

impl Eq for SecretKey {}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl Serialize for SecretKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SecretKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SecretKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}
