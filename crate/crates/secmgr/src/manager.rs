// SPDX-License-Identifier: Apache-2.0

//! The security manager as a trusted application.

use std::sync::Arc;

use ecig_core::access::AccessDecision;
use ecig_core::audit::{AuditEntry, AuditError, AuditLog, Outcome};
use ecig_core::smproto::{
    code, AuditAck, DecisionResponse, DescribeAssetRequest, DescribeAssetResponse, SecureAuditRequest,
    ValidateAddressRequest, ValidateKeyRequest, VerifyProofRequest, CMD_DESCRIBE_ASSET, CMD_ECHO,
    CMD_ISSUE_STORAGE_KEY, CMD_SECURE_AUDIT, CMD_VALIDATE_ADDRESS, CMD_VALIDATE_KEY, CMD_VERIFY_FIRMWARE_PROOF,
    SECURITY_MANAGER_TA,
};
use ecig_worldlink::server::{SessionInfo, TrustedApplication};
use ecig_worldlink::{ParamDirection, Parameter};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RoleKeys;
use crate::policy::{self, PolicyBook};
use crate::sealed::SealedKey;

pub struct SecurityManager {
    policies: PolicyBook,
    keys: RoleKeys,
    sealed: SealedKey,
    audit: Arc<AuditLog>,
}

impl SecurityManager {
    pub fn new(policies: PolicyBook, keys: RoleKeys, sealed: SealedKey, audit: Arc<AuditLog>) -> Self {
        Self {
            policies,
            keys,
            sealed,
            audit,
        }
    }

    fn record(&self, principal: &str, activity: &str, decision: AccessDecision, detail: String) -> Result<u64, u32> {
        let (outcome, detail) = match decision {
            AccessDecision::Allow => (Outcome::Ok, detail),
            AccessDecision::Deny(r) => (Outcome::Denied, format!("{detail} reason={r}")),
        };
        self.audit
            .append(AuditEntry::new(principal, activity).outcome(outcome).detail(detail))
            .map_err(audit_code)
    }

    fn validate_address(&self, req: ValidateAddressRequest) -> Result<DecisionResponse, u32> {
        let decision = self
            .policies
            .validate_address(req.asset_id, req.addr, req.length, req.access, req.privilege)
            .unwrap_or_else(|e| AccessDecision::Deny(e.as_denial()));
        let audit_seq = self.record(
            &req.principal,
            "sm.validate_address",
            decision,
            format!(
                "asset={} addr={:#06x} length={} access={:?} privilege={:?}",
                req.asset_id, req.addr, req.length, req.access, req.privilege
            ),
        )?;
        Ok(DecisionResponse { decision, audit_seq })
    }

    fn validate_key(&self, req: ValidateKeyRequest) -> Result<DecisionResponse, u32> {
        let decision = policy::validate_key(&self.keys, &req.key, req.role);
        let audit_seq = self.record(
            &req.principal,
            "sm.validate_key",
            decision,
            format!("role={}", req.role.as_str()),
        )?;
        Ok(DecisionResponse { decision, audit_seq })
    }

    fn verify_proof(&self, req: VerifyProofRequest) -> Result<DecisionResponse, u32> {
        let decision = match (hex::decode(&req.image_digest), hex::decode(&req.proof)) {
            (Ok(digest), Ok(proof)) => self
                .policies
                .verify_firmware_proof(req.asset_id, &digest, &proof)
                .unwrap_or_else(|e| AccessDecision::Deny(e.as_denial())),
            _ => AccessDecision::Deny(ecig_core::DenyReason::ProofMismatch),
        };
        let audit_seq = self.record(
            &req.principal,
            "sm.verify_firmware_proof",
            decision,
            format!("asset={} digest={}", req.asset_id, req.image_digest),
        )?;
        Ok(DecisionResponse { decision, audit_seq })
    }

    fn describe(&self, req: DescribeAssetRequest) -> Result<DescribeAssetResponse, u32> {
        let (decision, asset) = match self.policies.describe(req.asset_id) {
            Ok(d) => (AccessDecision::Allow, Some(d)),
            Err(e) => (AccessDecision::Deny(e.as_denial()), None),
        };
        let audit_seq = self.record(
            &req.principal,
            "sm.describe_asset",
            decision,
            format!("asset={}", req.asset_id),
        )?;
        Ok(DescribeAssetResponse {
            decision,
            asset,
            audit_seq,
        })
    }

    fn secure_audit(&self, req: SecureAuditRequest) -> Result<AuditAck, u32> {
        let mut entry = AuditEntry::new(req.principal, req.activity).detail(req.detail);
        if let Some(o) = req.outcome {
            entry = entry.outcome(o);
        }
        let seq = self.audit.append(entry).map_err(audit_code)?;
        Ok(AuditAck { seq })
    }

    fn issue_storage_key(&mut self, session: &SessionInfo, params: &mut [Parameter]) -> Result<(), u32> {
        let out = match params {
            [p] if p.direction == ParamDirection::Out => p,
            _ => return Err(code::BAD_PARAMETERS),
        };
        if !session.attested {
            let _ = self.audit.append(
                AuditEntry::new("normal_world", "sm.issue_storage_key")
                    .outcome(Outcome::Denied)
                    .detail(format!("session={} reason=session_not_attested", session.session_id)),
            );
            return Err(code::ACCESS_DENIED);
        }
        let key = self.sealed.get_or_create().map_err(|_| code::GENERIC)?;
        self.audit
            .append(
                AuditEntry::new("normal_world", "sm.issue_storage_key")
                    .outcome(Outcome::Ok)
                    .detail(format!("session={}", session.session_id)),
            )
            .map_err(audit_code)?;
        out.payload = key.as_bytes().to_vec();
        Ok(())
    }
}

fn audit_code(e: AuditError) -> u32 {
    match e {
        AuditError::StorageFull { .. } => code::STORAGE_NO_SPACE,
        _ => code::GENERIC,
    }
}

/// Runs a JSON-in, JSON-out command over parameters 0 and 1.
fn json_call<Q: DeserializeOwned, A: Serialize>(
    params: &mut [Parameter],
    f: impl FnOnce(Q) -> Result<A, u32>,
) -> Result<(), u32> {
    let [input, output] = params else {
        return Err(code::BAD_PARAMETERS);
    };
    if input.direction != ParamDirection::In || output.direction != ParamDirection::Out {
        return Err(code::BAD_PARAMETERS);
    }
    let req: Q = serde_json::from_slice(&input.payload).map_err(|_| code::BAD_FORMAT)?;
    let answer = f(req)?;
    output.payload = serde_json::to_vec(&answer).expect("responses serialize");
    Ok(())
}

impl TrustedApplication for SecurityManager {
    fn ta_id(&self) -> &str {
        SECURITY_MANAGER_TA
    }

    fn invoke(&mut self, session: &SessionInfo, command_id: u32, params: &mut [Parameter]) -> Result<(), u32> {
        match command_id {
            CMD_ECHO => {
                let input = params.first().map(|p| p.payload.clone()).unwrap_or_default();
                for p in params.iter_mut().filter(|p| p.direction.is_writable()) {
                    p.payload = input.clone();
                }
                Ok(())
            }
            CMD_VALIDATE_ADDRESS => json_call(params, |r| self.validate_address(r)),
            CMD_VALIDATE_KEY => json_call(params, |r| self.validate_key(r)),
            CMD_VERIFY_FIRMWARE_PROOF => json_call(params, |r| self.verify_proof(r)),
            CMD_DESCRIBE_ASSET => json_call(params, |r| self.describe(r)),
            CMD_SECURE_AUDIT => json_call(params, |r| self.secure_audit(r)),
            CMD_ISSUE_STORAGE_KEY => self.issue_storage_key(session, params),
            _ => Err(code::NOT_SUPPORTED),
        }
    }
}
