// SPDX-License-Identifier: Apache-2.0

//! Normal-world proxy for the security manager.

use std::path::{Path, PathBuf};

use ecig_core::access::{AccessKind, Privilege, Role, SecretKey};
use ecig_core::audit::Outcome;
use ecig_core::smproto::*;
use ecig_core::AssetId;
use ecig_worldlink::{Parameter, WorldCommand, WorldContext, WorldError, WorldSession};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// One context plus one attested session to the security manager.
#[derive(Debug)]
pub struct SmClient {
    ctx: WorldContext,
    session: Option<WorldSession>,
}

impl SmClient {
    /// Connects to the secure world at `socket` and opens a session whose
    /// caller image is `image`.
    pub fn connect(socket: &Path, image: &Path) -> Result<Self, WorldError> {
        let ctx = WorldContext::initialize(socket)?;
        let session = ctx.open_session(SECURITY_MANAGER_TA, image)?;
        Ok(Self {
            ctx,
            session: Some(session),
        })
    }

    pub fn is_attested(&self) -> bool {
        self.session.as_ref().is_some_and(|s| s.is_attested())
    }

    fn session(&self) -> Result<&WorldSession, WorldError> {
        self.session.as_ref().ok_or(WorldError::SessionClosed)
    }

    fn call<Q: Serialize, A: DeserializeOwned>(&self, cmd: u32, req: &Q) -> Result<A, WorldError> {
        let payload = serde_json::to_vec(req).expect("requests serialize");
        let mut c = WorldCommand::with_params(cmd, vec![Parameter::input(payload), Parameter::output()])?;
        let out = self.session()?.invoke(&mut c)?;
        let body = out.first().ok_or_else(|| WorldError::Protocol("missing output parameter".into()))?;
        serde_json::from_slice(body).map_err(|e| WorldError::Protocol(e.to_string()))
    }

    pub fn validate_address(
        &self,
        principal: &str,
        asset_id: AssetId,
        addr: u16,
        length: u16,
        access: AccessKind,
        privilege: Privilege,
    ) -> Result<DecisionResponse, WorldError> {
        self.call(
            CMD_VALIDATE_ADDRESS,
            &ValidateAddressRequest {
                principal: principal.into(),
                asset_id,
                addr,
                length,
                access,
                privilege,
            },
        )
    }

    pub fn validate_key(&self, principal: &str, key: &SecretKey, role: Role) -> Result<DecisionResponse, WorldError> {
        self.call(
            CMD_VALIDATE_KEY,
            &ValidateKeyRequest {
                principal: principal.into(),
                key: key.to_hex(),
                role,
            },
        )
    }

    pub fn verify_proof(
        &self,
        principal: &str,
        asset_id: AssetId,
        image_digest: &[u8],
        proof: &[u8],
    ) -> Result<DecisionResponse, WorldError> {
        self.call(
            CMD_VERIFY_FIRMWARE_PROOF,
            &VerifyProofRequest {
                principal: principal.into(),
                asset_id,
                image_digest: hex::encode(image_digest),
                proof: hex::encode(proof),
            },
        )
    }

    pub fn describe_asset(&self, principal: &str, asset_id: AssetId) -> Result<DescribeAssetResponse, WorldError> {
        self.call(
            CMD_DESCRIBE_ASSET,
            &DescribeAssetRequest {
                principal: principal.into(),
                asset_id,
            },
        )
    }

    /// Appends a record to the secure-world log and returns its sequence
    /// number.
    pub fn secure_audit(
        &self,
        principal: &str,
        activity: &str,
        outcome: Option<Outcome>,
        detail: &str,
    ) -> Result<u64, WorldError> {
        let ack: AuditAck = self.call(
            CMD_SECURE_AUDIT,
            &SecureAuditRequest {
                principal: principal.into(),
                activity: activity.into(),
                outcome,
                detail: detail.into(),
            },
        )?;
        Ok(ack.seq)
    }

    /// Fetches the sealed storage key. Only attested sessions receive it.
    pub fn storage_key(&self) -> Result<SecretKey, WorldError> {
        let mut c = WorldCommand::with_params(CMD_ISSUE_STORAGE_KEY, vec![Parameter::output()])?;
        let out = self.session()?.invoke(&mut c)?;
        out.first()
            .and_then(|b| SecretKey::from_slice(b))
            .ok_or_else(|| WorldError::Protocol("storage key must be 32 bytes".into()))
    }

    /// Closes the session and finalizes the context.
    pub fn close(&mut self) -> Result<(), WorldError> {
        if let Some(s) = self.session.take() {
            s.close()?;
        }
        self.ctx.finalize()
    }
}

impl Drop for SmClient {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

/// Where a gateway finds its secure world.
#[derive(Debug, Clone)]
pub struct SmEndpoint {
    pub socket: PathBuf,
    pub image: PathBuf,
}
