// SPDX-License-Identifier: Apache-2.0

//! User file, password verification and bearer tokens.
//!
//! ```toml
//! [[users]]
//! user_id = "alice"
//! role = "engineer"
//! salt = "…hex…"
//! hash = "…hex…"
//! iterations = 600000
//! ```

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use ecig_core::access::Role;
use ecig_core::clock::Clock;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::actmgr::Principal;

pub const DEFAULT_ITERATIONS: u32 = 600_000;
pub const DEFAULT_TOKEN_TTL: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub role: Role,
    pub salt: String,
    pub hash: String,
    pub iterations: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserFile {
    #[serde(default)]
    pub users: Vec<UserRecord>,
}

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("invalid credentials")]
    BadCredentials,
    #[error("missing, unknown or expired token")]
    BadToken,
    #[error("user file {path}: {reason}")]
    UserFile { path: String, reason: String },
}

impl UserFile {
    pub fn load(path: &Path) -> Result<Self, AuthError> {
        let err = |reason: String| AuthError::UserFile {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: UserFile = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for u in &file.users {
            if !seen.insert(u.user_id.as_str()) {
                return Err(err(format!("duplicate user `{}`", u.user_id)));
            }
            if hex::decode(&u.salt).is_err() || hex::decode(&u.hash).map(|h| h.len()) != Ok(32) {
                return Err(err(format!("user `{}` has a malformed salt or hash", u.user_id)));
            }
            if u.iterations == 0 {
                return Err(err(format!("user `{}` has zero iterations", u.user_id)));
            }
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("user files serialize")
    }
}

/// PBKDF2-HMAC-SHA256 with a 32-byte output.
pub fn hash_password(password: &[u8], salt: &[u8], iterations: u32) -> [u8; 32] {
    let mut out = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(password, salt, iterations, &mut out);
    out
}

/// Builds a user entry with a fresh 16-byte salt.
pub fn make_user(user_id: &str, role: Role, password: &str, iterations: u32) -> UserRecord {
    let mut salt = [0u8; 16];
    rand::rng().fill_bytes(&mut salt);
    UserRecord {
        user_id: user_id.into(),
        role,
        salt: hex::encode(salt),
        hash: hex::encode(hash_password(password.as_bytes(), &salt, iterations)),
        iterations,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthToken {
    pub token: String,
    pub principal: Principal,
    pub issued_at: i64,
    pub expires_at: i64,
}

pub struct Authenticator {
    users: HashMap<String, UserRecord>,
    tokens: Mutex<HashMap<String, AuthToken>>,
    ttl: Duration,
    clock: Arc<dyn Clock>,
    /// Verified against for unknown users so both failures cost the same.
    decoy: UserRecord,
}

impl std::fmt::Debug for Authenticator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Authenticator")
            .field("users", &self.users.len())
            .field("ttl", &self.ttl)
            .finish_non_exhaustive()
    }
}

impl Authenticator {
    pub fn new(users: UserFile, ttl: Duration, clock: Arc<dyn Clock>) -> Self {
        let iterations = users
            .users
            .first()
            .map_or(DEFAULT_ITERATIONS, |u| u.iterations);
        Self {
            decoy: make_user("", Role::ThirdParty, "decoy", iterations),
            users: users.users.into_iter().map(|u| (u.user_id.clone(), u)).collect(),
            tokens: Mutex::new(HashMap::new()),
            ttl,
            clock,
        }
    }

    fn tokens(&self) -> MutexGuard<'_, HashMap<String, AuthToken>> {
        self.tokens.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn login(&self, user_id: &str, password: &str) -> Result<AuthToken, AuthError> {
        let (user, known) = match self.users.get(user_id) {
            Some(u) => (u, true),
            None => (&self.decoy, false),
        };
        let salt = hex::decode(&user.salt).unwrap_or_default();
        let expected = hex::decode(&user.hash).unwrap_or_default();
        let computed = hash_password(password.as_bytes(), &salt, user.iterations);
        let matches: bool = computed.ct_eq(expected.as_slice()).into();
        if !(matches && known) {
            return Err(AuthError::BadCredentials);
        }
        let mut raw = [0u8; 32];
        rand::rng().fill_bytes(&mut raw);
        let now = self.clock.now_ms();
        let token = AuthToken {
            token: hex::encode(raw),
            principal: Principal::new(&user.user_id, user.role),
            issued_at: now,
            expires_at: now + self.ttl.as_millis() as i64,
        };
        let mut tokens = self.tokens();
        tokens.retain(|_, t| t.expires_at > now);
        tokens.insert(token.token.clone(), token.clone());
        Ok(token)
    }

    /// Maps a bearer token to its principal.
    pub fn resolve(&self, token: &str) -> Result<Principal, AuthError> {
        let now = self.clock.now_ms();
        let mut tokens = self.tokens();
        match tokens.get(token) {
            Some(t) if t.expires_at > now => Ok(t.principal.clone()),
            Some(_) => {
                tokens.remove(token);
                Err(AuthError::BadToken)
            }
            None => Err(AuthError::BadToken),
        }
    }
}
