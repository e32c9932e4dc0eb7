// SPDX-License-Identifier: Apache-2.0

//! Fixture harness: an in-process secure world hosting the security manager,
//! a simulated PLC fleet and a gateway serving HTTP on an ephemeral port.
//!
//! Every asset has register space `0x0000..=0x03FF` with one confidential
//! block `0x0100..=0x01FF` unless the options say otherwise. Register `a`
//! holds [`pattern`]`(asset, a)` at start, a 16-byte marker sits at
//! [`MARKER_ADDR`] and `0x0020` holds `0xBEEF`.

pub mod golden;
pub mod oracle;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ecig_core::access::{RegisterRange, Role, SecretKey};
use ecig_core::audit::{read_file, AuditRecord};
use ecig_core::clock::{Clock, SystemClock};
use ecig_core::cmdparse::{self, CommandKind};
use ecig_core::smproto::SECURITY_MANAGER_TA;
use ecig_core::AssetId;
use ecig_gateway::actmgr::{ActivityManager, ActivityResult, Principal};
use ecig_gateway::auth::{make_user, UserFile};
use ecig_gateway::{GatewayConfig, GatewayServer, SchedulerConfig};
use ecig_plcsim::{Preload, SimAsset, SimAssetConfig};
use ecig_secmgr::{build_world, train_offline, AssetPolicy, RoleKeys, SwConfig};
use ecig_worldlink::server::{SecureWorld, SecureWorldServer};
use ecig_worldlink::MeasurementMode;
use serde_json::Value;
use tempfile::TempDir;

pub const REGISTER_SPACE: (u16, u16) = (0x0000, 0x03FF);
pub const CONFIDENTIAL: (u16, u16) = (0x0100, 0x01FF);
pub const MARKER_ADDR: u16 = 0x0180;
/// Sixteen bytes of plaintext that must never appear in the store.
pub const MARKER: [u16; 8] = [0x5345, 0x4352, 0x4554, 0x2D4D, 0x4152, 0x4B45, 0x522D, 0x3136];
pub const ILLEGAL: (u16, u16) = (0xF000, 0xFFFF);
pub const USER_ITERATIONS: u32 = 1_000;

/// Initial value of register `addr` on `asset`.
pub fn pattern(asset: AssetId, addr: u16) -> u16 {
    (addr.wrapping_mul(0x9E37) ^ 0x1234).wrapping_add(asset as u16)
}

pub fn marker_bytes() -> Vec<u8> {
    MARKER.iter().flat_map(|w| w.to_be_bytes()).collect()
}

pub fn device_key(asset: AssetId) -> SecretKey {
    SecretKey::from_bytes([0x10u8.wrapping_add(asset as u8); 32])
}

pub fn role_keys() -> RoleKeys {
    RoleKeys {
        third_party: SecretKey::from_bytes([0xA1; 32]),
        engineer: SecretKey::from_bytes([0xB2; 32]),
        administrator: SecretKey::from_bytes([0xC3; 32]),
        scheduler: SecretKey::from_bytes([0xD4; 32]),
    }
}

pub fn user_id(role: Role) -> &'static str {
    match role {
        Role::ThirdParty => "vendor",
        Role::Engineer => "engineer",
        Role::Administrator => "admin",
        Role::Scheduler => "scheduler",
    }
}

pub fn password(role: Role) -> String {
    format!("pw-{}", role.as_str())
}

#[derive(Debug, Clone)]
pub struct Options {
    pub assets: usize,
    pub confidential: Vec<RegisterRange>,
    /// Store and profile intervals in seconds.
    pub scheduler: Option<(u64, u64)>,
    pub profile_window_secs: u64,
    pub mode: MeasurementMode,
    /// Record the gateway image's reference digest before starting.
    pub train: bool,
    pub modbus_timeout_ms: u64,
    pub firmware_cap_bytes: u64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            assets: 1,
            confidential: vec![RegisterRange::new(CONFIDENTIAL.0, CONFIDENTIAL.1).unwrap()],
            scheduler: None,
            profile_window_secs: 300,
            mode: MeasurementMode::Normal,
            train: true,
            modbus_timeout_ms: 1_000,
            firmware_cap_bytes: 16 * 1024 * 1024,
        }
    }
}

/// Firmware file [`sample_line`] refers to.
pub const SAMPLE_FIRMWARE: &str = "fw-sample.bin";

/// A well-formed command of `kind` against asset 1, touching only
/// non-confidential registers, carrying `key` where the verb takes one.
pub fn sample_line(kind: CommandKind, key: &SecretKey) -> String {
    let k = key.to_hex();
    match kind {
        CommandKind::Read => "read 1 0x0010 2".into(),
        CommandKind::Write => "write 1 0x0030 1 1234".into(),
        CommandKind::Update => format!("update 1 {SAMPLE_FIRMWARE}"),
        CommandKind::ReadS => format!("read_s {k} 1 0x0010 2"),
        CommandKind::WriteS => format!("write_s {k} 1 0x0031 1 5678"),
        CommandKind::StoreS => format!("store_s {k} 1"),
        CommandKind::GenThreatProfileS => format!("gen_threat_profile_s {k}"),
    }
}

/// A running fixture. Field order is teardown order.
pub struct Fixture {
    pub gateway: GatewayServer,
    pub sw: SecureWorldServer,
    pub world: Arc<SecureWorld>,
    pub assets: Vec<SimAsset>,
    pub sw_cfg: SwConfig,
    pub gw_cfg: GatewayConfig,
    pub image: PathBuf,
    pub clock: Arc<dyn Clock>,
    pub dir: TempDir,
}

impl Fixture {
    pub fn start(opts: Options) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        let space = RegisterRange::new(REGISTER_SPACE.0, REGISTER_SPACE.1).unwrap();

        let mut assets = Vec::new();
        let mut policies = Vec::new();
        for i in 0..opts.assets {
            let id = i as AssetId + 1;
            let mut cfg = SimAssetConfig::new(id, "127.0.0.1:0", device_key(id));
            cfg.illegal_ranges
                .push(RegisterRange::new(ILLEGAL.0, ILLEGAL.1).unwrap());
            cfg.preload.push(Preload {
                addr: space.lo(),
                words: space.iter().map(|a| pattern(id, a)).collect(),
            });
            cfg.preload.push(Preload {
                addr: MARKER_ADDR,
                words: MARKER.to_vec(),
            });
            cfg.preload.push(Preload {
                addr: 0x20,
                words: vec![0xBEEF],
            });
            let sim = SimAsset::start(&cfg).expect("plcsim starts");
            policies.push(AssetPolicy {
                asset_id: id,
                endpoint: sim.endpoint(),
                unit_id: 1,
                register_space: space,
                confidential_ranges: opts.confidential.clone(),
                device_key: device_key(id),
            });
            assets.push(sim);
        }

        let sw_cfg = SwConfig {
            socket: dir.path().join("sw.sock"),
            mode: opts.mode,
            storage_dir: dir.path().join("sw"),
            hash_algorithm: Default::default(),
            audit_capacity: None,
            keys: role_keys(),
            assets: policies,
        };
        let image = dir.path().join("gateway.img");
        std::fs::write(&image, b"gateway normal-world image v1\n".repeat(64)).unwrap();
        std::fs::create_dir_all(&sw_cfg.storage_dir).unwrap();
        if opts.train {
            train_offline(&sw_cfg, SECURITY_MANAGER_TA, &image).expect("training");
        }
        let world = build_world(&sw_cfg, clock.clone()).expect("secure world builds");
        let sw = world.clone().listen(&sw_cfg.socket).expect("secure world listens");

        let users_file = dir.path().join("users.toml");
        let users = UserFile {
            users: [Role::ThirdParty, Role::Engineer, Role::Administrator]
                .into_iter()
                .map(|r| make_user(user_id(r), r, &password(r), USER_ITERATIONS))
                .collect(),
        };
        std::fs::write(&users_file, users.to_toml()).unwrap();

        let mut gw_cfg = GatewayConfig::new(&sw_cfg.socket, dir.path().join("gw"), users_file);
        gw_cfg.listen = "127.0.0.1:0".into();
        gw_cfg.image = Some(image.clone());
        gw_cfg.sw_audit_log = Some(sw_cfg.audit_log());
        gw_cfg.profile_window_secs = opts.profile_window_secs;
        gw_cfg.modbus_timeout_ms = opts.modbus_timeout_ms;
        gw_cfg.firmware_cap_bytes = opts.firmware_cap_bytes;
        if let Some((store, profile)) = opts.scheduler {
            gw_cfg.scheduler = SchedulerConfig {
                enabled: true,
                store_interval_secs: store,
                profile_interval_secs: profile,
                assets: (1..=opts.assets as AssetId).collect(),
                key: Some(role_keys().scheduler),
            };
        }
        let gateway = GatewayServer::spawn(gw_cfg.clone(), clock.clone()).expect("gateway starts");
        Self {
            gateway,
            sw,
            world,
            assets,
            sw_cfg,
            gw_cfg,
            image,
            clock,
            dir,
        }
    }

    pub fn am(&self) -> &Arc<ActivityManager> {
        &self.gateway.gateway().am
    }

    pub fn asset(&self, id: AssetId) -> &SimAsset {
        &self.assets[id as usize - 1]
    }

    pub fn key(&self, role: Role) -> SecretKey {
        *self.sw_cfg.keys.get(role)
    }

    pub fn principal(role: Role) -> Principal {
        Principal::new(user_id(role), role)
    }

    /// Parses `line` and dispatches it as `role`, bypassing HTTP.
    pub fn dispatch(&self, role: Role, line: &str) -> ActivityResult {
        let cmd = cmdparse::parse(line).unwrap_or_else(|e| panic!("`{line}`: {e}"));
        self.am().dispatch(&cmd, &Self::principal(role))
    }

    /// Places a firmware image in the staging area.
    pub fn stage(&self, name: &str, bytes: &[u8]) {
        let dir = self.gw_cfg.staging_dir();
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join(name), bytes).unwrap();
    }

    pub fn store_dir(&self) -> PathBuf {
        self.gw_cfg.data_dir.join("store")
    }

    pub fn nw_log(&self) -> Vec<AuditRecord> {
        read_file(&self.gw_cfg.data_dir.join("logs").join("nw.log")).unwrap_or_default()
    }

    pub fn sw_log(&self) -> Vec<AuditRecord> {
        read_file(&self.sw_cfg.audit_log()).unwrap_or_default()
    }

    /// Activities of the normal-world records with the given sequence numbers.
    pub fn trail(&self, ids: &[u64]) -> Vec<String> {
        let log = self.nw_log();
        ids.iter()
            .filter_map(|id| log.iter().find(|r| r.seq == *id))
            .map(|r| r.activity.clone())
            .collect()
    }

    pub fn base_url(&self) -> String {
        self.gateway.base_url()
    }

    pub fn client(&self) -> Client {
        Client::new(self.base_url())
    }

    /// Logs `role` in over HTTP.
    pub fn login(&self, role: Role) -> Client {
        let mut c = self.client();
        let (status, body) = c.login(user_id(role), &password(role));
        assert_eq!(status, 200, "login as {role}: {body}");
        c
    }
}

/// Minimal JSON-over-HTTP client for tests.
pub struct Client {
    base: String,
    agent: ureq::Agent,
    pub token: Option<String>,
}

impl Client {
    pub fn new(base: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self {
            base,
            agent,
            token: None,
        }
    }

    fn finish(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, Value) {
        let mut r = r.expect("http transport");
        let status = r.status().as_u16();
        let text = r.body_mut().read_to_string().unwrap_or_default();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    fn auth(&self) -> String {
        format!("Bearer {}", self.token.as_deref().unwrap_or(""))
    }

    pub fn login(&mut self, user: &str, password: &str) -> (u16, Value) {
        let (status, body) = self.post_json(
            "/api/v1/auth/login",
            &serde_json::json!({ "user_id": user, "password": password }),
        );
        if status == 200 {
            self.token = body["token"].as_str().map(str::to_owned);
        }
        (status, body)
    }

    pub fn post_json(&self, path: &str, body: &Value) -> (u16, Value) {
        Self::finish(
            self.agent
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .header("authorization", self.auth())
                .send(body.to_string()),
        )
    }

    pub fn post_bytes(&self, path: &str, body: &[u8]) -> (u16, Value) {
        Self::finish(
            self.agent
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/octet-stream")
                .header("authorization", self.auth())
                .send(body),
        )
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        Self::finish(
            self.agent
                .get(format!("{}{path}", self.base))
                .header("authorization", self.auth())
                .call(),
        )
    }

    pub fn command(&self, line: &str) -> (u16, Value) {
        self.post_json("/api/v1/command", &serde_json::json!({ "command": line }))
    }
}

/// Number of record files currently in the store.
pub fn record_files(store: &Path) -> usize {
    fn walk(p: &Path) -> usize {
        std::fs::read_dir(p)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .map(|e| {
                        let p = e.path();
                        if p.is_dir() {
                            walk(&p)
                        } else {
                            usize::from(p.extension().is_some_and(|x| x == "bin"))
                        }
                    })
                    .sum()
            })
            .unwrap_or(0)
    }
    walk(store)
}
