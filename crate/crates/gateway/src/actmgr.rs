// SPDX-License-Identifier: Apache-2.0

//! Activity manager (AM): role gate, workers and the normal-world trail.
//!
//! Every dispatch writes a start record, one record per step and a terminal
//! record named after the command verb. Steps that consult the security
//! manager carry the secure-world sequence number as `sw_seq=<n>`.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ecig_core::access::{AccessDecision, AccessKind, DenyReason, Privilege, Role, SecretKey};
use ecig_core::audit::{AuditEntry, Outcome, TimeWindow};
use ecig_core::clock::Clock;
use ecig_core::cmdparse::{CommandKind, ValidatedCommand};
use ecig_core::smproto::{AssetDescriptor, DecisionResponse};
use ecig_core::threatprofile::{build_profile, detect_anomalies, Anomaly, ThreatProfileTree};
use ecig_core::AssetId;
use ecig_worldlink::WorldError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datastore::{Category, DataStore, NewRecord, RecordReceipt, StoreError, WorldFilter};
use crate::netclient::{AssetConnection, NetError};
use crate::smclient::SmClient;

/// Authenticated caller. The role is fixed at login.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub user_id: String,
    pub role: Role,
}

impl Principal {
    pub fn new(user_id: impl Into<String>, role: Role) -> Self {
        Self {
            user_id: user_id.into(),
            role,
        }
    }

    pub fn scheduler() -> Self {
        Self::new("scheduler", Role::Scheduler)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    NetworkError,
    TransferError,
    ProofInvalid,
    StorageError,
    SecureWorld,
    FileNotFound,
}

impl FailReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailReason::NetworkError => "network_error",
            FailReason::TransferError => "transfer_error",
            FailReason::ProofInvalid => "proof_invalid",
            FailReason::StorageError => "storage_error",
            FailReason::SecureWorld => "secure_world",
            FailReason::FileNotFound => "file_not_found",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Registers {
        asset_id: AssetId,
        addr: u16,
        words: Vec<u16>,
    },
    Written {
        asset_id: AssetId,
        addr: u16,
        count: usize,
    },
    InstallProof {
        asset_id: AssetId,
        filename: String,
        digest: String,
        proof: String,
    },
    Records {
        receipts: Vec<RecordReceipt>,
    },
    Profile {
        profile_id: u64,
        clients: usize,
        anomalies: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ActivityResult {
    Ok {
        payload: Payload,
        audit_ids: Vec<u64>,
    },
    Denied {
        reason: DenyReason,
        audit_ids: Vec<u64>,
    },
    Failed {
        reason: FailReason,
        detail: String,
        audit_ids: Vec<u64>,
    },
}

impl ActivityResult {
    pub fn outcome(&self) -> Outcome {
        match self {
            ActivityResult::Ok { .. } => Outcome::Ok,
            ActivityResult::Denied { .. } => Outcome::Denied,
            ActivityResult::Failed { .. } => Outcome::Failed,
        }
    }

    pub fn audit_ids(&self) -> &[u64] {
        match self {
            ActivityResult::Ok { audit_ids, .. }
            | ActivityResult::Denied { audit_ids, .. }
            | ActivityResult::Failed { audit_ids, .. } => audit_ids,
        }
    }

    pub fn payload(&self) -> Option<&Payload> {
        match self {
            ActivityResult::Ok { payload, .. } => Some(payload),
            _ => None,
        }
    }

    pub fn deny_reason(&self) -> Option<DenyReason> {
        match self {
            ActivityResult::Denied { reason, .. } => Some(*reason),
            _ => None,
        }
    }

    pub fn fail_reason(&self) -> Option<FailReason> {
        match self {
            ActivityResult::Failed { reason, .. } => Some(*reason),
            _ => None,
        }
    }
}

/// Whether `role` may issue commands of `kind`.
pub fn role_allows(kind: CommandKind, role: Role) -> bool {
    use CommandKind::*;
    match kind {
        Read | Write | Update => role == Role::ThirdParty,
        ReadS | WriteS | StoreS => matches!(role, Role::Engineer | Role::Scheduler),
        GenThreatProfileS => matches!(role, Role::Administrator | Role::Scheduler),
    }
}

/// Persisted threat profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDocument {
    pub generated_at: i64,
    pub generated_by: String,
    pub tree: ThreatProfileTree,
    /// `None` when no earlier profile existed to compare against.
    pub anomalies: Option<Vec<Anomaly>>,
}

#[derive(Debug, Clone)]
pub struct ActivityConfig {
    pub staging_dir: PathBuf,
    pub modbus_timeout: Duration,
    pub profile_window: Duration,
    pub baseline_profiles: usize,
    pub anomaly_k: f64,
}

impl ActivityConfig {
    pub fn new(staging_dir: impl Into<PathBuf>) -> Self {
        Self {
            staging_dir: staging_dir.into(),
            modbus_timeout: crate::netclient::DEFAULT_TIMEOUT,
            profile_window: Duration::from_secs(300),
            baseline_profiles: 5,
            anomaly_k: ecig_core::threatprofile::DEFAULT_ANOMALY_K,
        }
    }
}

enum Stop {
    Denied(DenyReason),
    Failed(FailReason, String),
}

type Flow<T> = Result<T, Stop>;

struct Trail<'a> {
    store: &'a DataStore,
    who: &'a Principal,
    ids: Vec<u64>,
}

impl Trail<'_> {
    fn write(&mut self, entry: AuditEntry) {
        match self.store.audit().append(entry) {
            Ok(seq) => self.ids.push(seq),
            Err(e) => tracing::warn!("normal-world audit append failed: {e}"),
        }
    }

    fn step(&mut self, activity: &str, outcome: Outcome, detail: impl Into<String>) {
        self.write(
            AuditEntry::new(&self.who.user_id, activity)
                .outcome(outcome)
                .detail(detail),
        );
    }
}

fn decision_outcome(d: AccessDecision) -> (Outcome, String) {
    match d {
        AccessDecision::Allow => (Outcome::Ok, String::new()),
        AccessDecision::Deny(r) => (Outcome::Denied, format!(" reason={r}")),
    }
}

fn net_fail(e: NetError) -> Stop {
    match e {
        NetError::TransferError(d) => Stop::Failed(FailReason::TransferError, d),
        other => Stop::Failed(FailReason::NetworkError, other.to_string()),
    }
}

fn store_fail(e: StoreError) -> Stop {
    Stop::Failed(FailReason::StorageError, e.to_string())
}

fn sw_fail(e: WorldError) -> Stop {
    Stop::Failed(FailReason::SecureWorld, e.to_string())
}

/// A staged file name must be a single plain path component.
pub fn is_safe_filename(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.len() <= 255
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

pub struct ActivityManager {
    sm: Arc<SmClient>,
    store: Arc<DataStore>,
    clock: Arc<dyn Clock>,
    cfg: ActivityConfig,
}

impl std::fmt::Debug for ActivityManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActivityManager").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl ActivityManager {
    pub fn new(sm: Arc<SmClient>, store: Arc<DataStore>, clock: Arc<dyn Clock>, cfg: ActivityConfig) -> Self {
        Self { sm, store, clock, cfg }
    }

    pub fn store(&self) -> &Arc<DataStore> {
        &self.store
    }

    pub fn config(&self) -> &ActivityConfig {
        &self.cfg
    }

    /// Runs `cmd` on behalf of `who`. Safe to call from many threads.
    pub fn dispatch(&self, cmd: &ValidatedCommand, who: &Principal) -> ActivityResult {
        let started = Instant::now();
        let kind = cmd.kind();
        let mut t = Trail {
            store: &self.store,
            who,
            ids: Vec::new(),
        };
        t.write(
            AuditEntry::new(&who.user_id, kind.verb())
                .detail(format!("role={} cmd={}", who.role, cmd.render_redacted())),
        );
        let flow = if role_allows(kind, who.role) {
            match cmd {
                ValidatedCommand::Read { .. } | ValidatedCommand::Write { .. } => self.diagnostic(&mut t, cmd),
                ValidatedCommand::Update { asset, filename } => self.firmware(&mut t, *asset, filename),
                ValidatedCommand::ReadS { key, .. } | ValidatedCommand::WriteS { key, .. } => {
                    self.maintenance(&mut t, key, cmd)
                }
                ValidatedCommand::StoreS { key, asset } => self.store_records(&mut t, key, *asset),
                ValidatedCommand::GenThreatProfileS { key } => self.threat_profile(&mut t, key),
            }
        } else {
            Err(Stop::Denied(DenyReason::RoleForbidden))
        };
        let latency = started.elapsed().as_millis() as u64;
        let (outcome, detail) = match &flow {
            Ok(_) => (Outcome::Ok, String::new()),
            Err(Stop::Denied(r)) => (Outcome::Denied, format!("reason={r}")),
            Err(Stop::Failed(r, d)) => (Outcome::Failed, format!("reason={} error={d}", r.as_str())),
        };
        t.write(
            AuditEntry::new(&who.user_id, kind.verb())
                .outcome(outcome)
                .latency_ms(latency)
                .detail(format!("{detail} role={}", who.role).trim_start().to_owned()),
        );
        let audit_ids = t.ids;
        match flow {
            Ok(payload) => ActivityResult::Ok { payload, audit_ids },
            Err(Stop::Denied(reason)) => ActivityResult::Denied { reason, audit_ids },
            Err(Stop::Failed(reason, detail)) => ActivityResult::Failed {
                reason,
                detail,
                audit_ids,
            },
        }
    }

    fn sm_decision(
        &self,
        t: &mut Trail<'_>,
        activity: &str,
        detail: String,
        r: Result<DecisionResponse, WorldError>,
    ) -> Flow<()> {
        match r {
            Ok(d) => {
                let (outcome, reason) = decision_outcome(d.decision);
                t.step(activity, outcome, format!("{detail} sw_seq={}{reason}", d.audit_seq));
                match d.decision {
                    AccessDecision::Allow => Ok(()),
                    AccessDecision::Deny(r) => Err(Stop::Denied(r)),
                }
            }
            Err(e) => {
                t.step(activity, Outcome::Failed, format!("{detail} reason=secure_world"));
                Err(sw_fail(e))
            }
        }
    }

    fn check_key(&self, t: &mut Trail<'_>, key: &SecretKey) -> Flow<()> {
        let who = t.who;
        let r = self.sm.validate_key(&who.user_id, key, who.role);
        self.sm_decision(t, "sm.validate_key", format!("role={}", who.role), r)
    }

    fn check_address(
        &self,
        t: &mut Trail<'_>,
        asset: AssetId,
        addr: u16,
        length: u16,
        access: AccessKind,
        privilege: Privilege,
    ) -> Flow<()> {
        let r = self
            .sm
            .validate_address(&t.who.user_id, asset, addr, length, access, privilege);
        let access_s = match access {
            AccessKind::Read => "read",
            AccessKind::Write => "write",
        };
        self.sm_decision(
            t,
            "sm.validate_address",
            format!("asset={asset} addr={addr:#06x} length={length} access={access_s}"),
            r,
        )
    }

    fn describe(&self, t: &mut Trail<'_>, asset: AssetId) -> Flow<AssetDescriptor> {
        match self.sm.describe_asset(&t.who.user_id, asset) {
            Ok(resp) => {
                let (outcome, reason) = decision_outcome(resp.decision);
                t.step(
                    "sm.describe_asset",
                    outcome,
                    format!("asset={asset} sw_seq={}{reason}", resp.audit_seq),
                );
                match (resp.decision, resp.asset) {
                    (AccessDecision::Allow, Some(d)) => Ok(d),
                    (AccessDecision::Deny(r), _) => Err(Stop::Denied(r)),
                    (AccessDecision::Allow, None) => {
                        Err(Stop::Failed(FailReason::SecureWorld, "descriptor missing".into()))
                    }
                }
            }
            Err(e) => {
                t.step("sm.describe_asset", Outcome::Failed, format!("asset={asset} reason=secure_world"));
                Err(sw_fail(e))
            }
        }
    }

    fn connect(&self, t: &mut Trail<'_>, d: &AssetDescriptor) -> Flow<AssetConnection> {
        match AssetConnection::connect(d.asset_id, &d.endpoint, d.unit_id, self.cfg.modbus_timeout) {
            Ok(c) => {
                t.step("nc.connect", Outcome::Ok, format!("asset={} endpoint={}", d.asset_id, d.endpoint));
                Ok(c)
            }
            Err(e) => {
                t.step(
                    "nc.connect",
                    Outcome::Failed,
                    format!("asset={} endpoint={} reason=network_error", d.asset_id, d.endpoint),
                );
                Err(net_fail(e))
            }
        }
    }

    fn disconnect(&self, t: &mut Trail<'_>, mut c: AssetConnection) {
        c.disconnect();
        t.step("nc.disconnect", Outcome::Ok, format!("asset={}", c.asset_id()));
    }

    /// Reads or writes through an open connection, then disconnects.
    fn exchange(&self, t: &mut Trail<'_>, d: &AssetDescriptor, cmd: &ValidatedCommand) -> Flow<Payload> {
        let mut conn = self.connect(t, d)?;
        let asset_id = d.asset_id;
        let result = match cmd {
            ValidatedCommand::Read { addr, length, .. } | ValidatedCommand::ReadS { addr, length, .. } => conn
                .read_span(*addr, usize::from(*length))
                .map(|words| Payload::Registers {
                    asset_id,
                    addr: *addr,
                    words,
                }),
            ValidatedCommand::Write { addr, data, .. } | ValidatedCommand::WriteS { addr, data, .. } => {
                conn.write_span(*addr, data).map(|()| Payload::Written {
                    asset_id,
                    addr: *addr,
                    count: data.len(),
                })
            }
            _ => unreachable!("exchange is only used for register commands"),
        };
        let step = if matches!(cmd.kind(), CommandKind::Read | CommandKind::ReadS) {
            "nc.read"
        } else {
            "nc.write"
        };
        let detail = format!(
            "asset={asset_id} addr={:#06x} count={}",
            cmd.addr().unwrap_or(0),
            cmd.length().unwrap_or(0)
        );
        match &result {
            Ok(_) => t.step(step, Outcome::Ok, detail),
            Err(_) => t.step(step, Outcome::Failed, format!("{detail} reason=network_error")),
        }
        self.disconnect(t, conn);
        result.map_err(net_fail)
    }

    fn diagnostic(&self, t: &mut Trail<'_>, cmd: &ValidatedCommand) -> Flow<Payload> {
        let asset = cmd.asset_id().expect("register commands name an asset");
        let access = if cmd.kind() == CommandKind::Read {
            AccessKind::Read
        } else {
            AccessKind::Write
        };
        self.check_address(
            t,
            asset,
            cmd.addr().unwrap_or(0),
            cmd.length().unwrap_or(0),
            access,
            Privilege::NonConfidentialOnly,
        )?;
        let d = self.describe(t, asset)?;
        self.exchange(t, &d, cmd)
    }

    fn maintenance(&self, t: &mut Trail<'_>, key: &SecretKey, cmd: &ValidatedCommand) -> Flow<Payload> {
        self.check_key(t, key)?;
        let asset = cmd.asset_id().expect("register commands name an asset");
        let access = if cmd.kind() == CommandKind::ReadS {
            AccessKind::Read
        } else {
            AccessKind::Write
        };
        self.check_address(
            t,
            asset,
            cmd.addr().unwrap_or(0),
            cmd.length().unwrap_or(0),
            access,
            Privilege::Full,
        )?;
        let d = self.describe(t, asset)?;
        self.exchange(t, &d, cmd)
    }

    fn firmware(&self, t: &mut Trail<'_>, asset: AssetId, filename: &str) -> Flow<Payload> {
        let d = self.describe(t, asset)?;
        let image = if is_safe_filename(filename) {
            fs::read(self.cfg.staging_dir.join(filename)).map_err(|e| e.to_string())
        } else {
            Err("not a staged file name".to_owned())
        };
        let image = match image {
            Ok(bytes) if !bytes.is_empty() => {
                t.step("fm.load_image", Outcome::Ok, format!("file={filename} bytes={}", bytes.len()));
                bytes
            }
            Ok(_) | Err(_) => {
                t.step("fm.load_image", Outcome::Failed, format!("file={filename} reason=file_not_found"));
                return Err(Stop::Failed(
                    FailReason::FileNotFound,
                    format!("no staged image named {filename}"),
                ));
            }
        };
        let digest: [u8; 32] = Sha256::digest(&image).into();
        let mut conn = self.connect(t, &d)?;
        let sent = conn.transfer_firmware(&image);
        match &sent {
            Ok(_) => t.step(
                "nc.transfer",
                Outcome::Ok,
                format!("asset={asset} bytes={} chunks={}", image.len(), image.len().div_ceil(1024)),
            ),
            Err(_) => t.step("nc.transfer", Outcome::Failed, format!("asset={asset} reason=transfer_error")),
        }
        self.disconnect(t, conn);
        let proof = sent.map_err(net_fail)?;
        let r = self.sm.verify_proof(&t.who.user_id, asset, &digest, &proof);
        match self.sm_decision(t, "sm.verify_firmware_proof", format!("asset={asset}"), r) {
            Ok(()) => Ok(Payload::InstallProof {
                asset_id: asset,
                filename: filename.to_owned(),
                digest: hex::encode(digest),
                proof: hex::encode(proof),
            }),
            Err(Stop::Denied(r)) => Err(Stop::Failed(
                FailReason::ProofInvalid,
                format!("install proof rejected ({r})"),
            )),
            Err(other) => Err(other),
        }
    }

    fn store_records(&self, t: &mut Trail<'_>, key: &SecretKey, asset: AssetId) -> Flow<Payload> {
        self.check_key(t, key)?;
        let d = self.describe(t, asset)?;
        let space = d.register_space;
        let mut conn = self.connect(t, &d)?;
        let words = conn.read_span(space.lo(), space.len() as usize);
        match &words {
            Ok(w) => t.step(
                "nc.read",
                Outcome::Ok,
                format!("asset={asset} addr={:#06x} count={}", space.lo(), w.len()),
            ),
            Err(_) => t.step(
                "nc.read",
                Outcome::Failed,
                format!("asset={asset} addr={:#06x} reason=network_error", space.lo()),
            ),
        }
        self.disconnect(t, conn);
        let words = words.map_err(net_fail)?;
        let captured_at = self.clock.now_ms();
        let mut conf = NewRecord {
            asset_id: asset,
            category: Category::Confidential,
            captured_at,
            snapshot: Default::default(),
        };
        let mut open = NewRecord {
            category: Category::NonConfidential,
            ..conf.clone()
        };
        for (addr, w) in space.iter().zip(words) {
            if d.is_confidential(addr) {
                conf.snapshot.insert(addr, w);
            } else {
                open.snapshot.insert(addr, w);
            }
        }
        let batch: Vec<NewRecord> = [conf, open].into_iter().filter(|r| !r.snapshot.is_empty()).collect();
        match self.store.put_records(batch) {
            Ok(receipts) => {
                let ids: Vec<String> = receipts.iter().map(|r| r.record_id.to_string()).collect();
                t.step(
                    "dc.put_record",
                    Outcome::Ok,
                    format!("asset={asset} records={}", ids.join(",")),
                );
                Ok(Payload::Records { receipts })
            }
            Err(e) => {
                t.step("dc.put_record", Outcome::Failed, format!("asset={asset} reason=storage_error"));
                Err(store_fail(e))
            }
        }
    }

    fn threat_profile(&self, t: &mut Trail<'_>, key: &SecretKey) -> Flow<Payload> {
        self.check_key(t, key)?;
        let now = self.clock.now_ms();
        let window = TimeWindow::new(now - self.cfg.profile_window.as_millis() as i64, now);
        let logs = match self.store.read_logs(window, WorldFilter::Both) {
            Ok(l) => {
                t.step(
                    "dc.get_logs",
                    Outcome::Ok,
                    format!("from={} to={} records={}", window.from_ms, window.to_ms, l.len()),
                );
                l
            }
            Err(e) => {
                t.step("dc.get_logs", Outcome::Failed, "reason=storage_error");
                return Err(store_fail(e));
            }
        };
        let tree = build_profile(&logs, window);
        t.step(
            "tpw.build_profile",
            Outcome::Ok,
            format!("clients={} terminal={}", tree.clients.len(), tree.root.terminal_records),
        );
        let baseline = self.baseline().map_err(store_fail)?;
        let anomalies = detect_anomalies(&tree, &baseline, self.cfg.anomaly_k).ok();
        let clients = tree.clients.len();
        let flagged = anomalies.as_ref().map_or(0, Vec::len);
        let doc = ProfileDocument {
            generated_at: now,
            generated_by: t.who.user_id.clone(),
            tree,
            anomalies,
        };
        let bytes = serde_json::to_vec_pretty(&doc).expect("profiles serialize");
        match self.store.put_profile(&bytes) {
            Ok(profile_id) => {
                t.step(
                    "dc.put_profile",
                    Outcome::Ok,
                    format!("profile={profile_id} anomalies={flagged}"),
                );
                Ok(Payload::Profile {
                    profile_id,
                    clients,
                    anomalies: flagged,
                })
            }
            Err(e) => {
                t.step("dc.put_profile", Outcome::Failed, "reason=storage_error");
                Err(store_fail(e))
            }
        }
    }

    /// The most recent stored profiles, oldest first.
    fn baseline(&self) -> Result<Vec<ThreatProfileTree>, StoreError> {
        let ids = self.store.profile_ids()?;
        let mut out = Vec::new();
        for id in ids.iter().rev().take(self.cfg.baseline_profiles).rev() {
            if let Some(bytes) = self.store.get_profile(*id)? {
                if let Ok(doc) = serde_json::from_slice::<ProfileDocument>(&bytes) {
                    out.push(doc.tree);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_table() {
        use CommandKind::*;
        let expect = |k, r| {
            matches!(
                (k, r),
                (Read | Write | Update, Role::ThirdParty)
                    | (ReadS | WriteS | StoreS, Role::Engineer | Role::Scheduler)
                    | (GenThreatProfileS, Role::Administrator | Role::Scheduler)
            )
        };
        let mut allowed = 0;
        for k in CommandKind::ALL {
            for r in Role::ALL {
                assert_eq!(role_allows(k, r), expect(k, r), "{k} {r}");
                allowed += usize::from(role_allows(k, r));
            }
        }
        assert_eq!(allowed, 3 + 6 + 2);
    }

    #[test]
    fn staged_names() {
        for ok in ["fw.bin", "image-1.2_b", "a"] {
            assert!(is_safe_filename(ok), "{ok}");
        }
        for bad in ["", ".", "..", "../x", "a/b", ".hidden", "a\\b", "x y"] {
            assert!(!is_safe_filename(bad), "{bad}");
        }
    }
}
