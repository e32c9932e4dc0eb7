// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::sync::Arc;

use ecig_core::access::{AccessDecision, AccessKind, DenyReason, Privilege, RegisterRange, Role, SecretKey};
use ecig_core::audit::{check_monotonic, read_file, Outcome};
use ecig_core::clock::SystemClock;
use ecig_core::smproto::*;
use ecig_secmgr::{build_world, install_proof, train_offline, validate_key, AssetPolicy, PolicyBook, RoleKeys, SwConfig};
use ecig_worldlink::server::SecureWorldServer;
use ecig_worldlink::{HashAlgorithm, MeasurementMode, Parameter, WorldCommand, WorldContext, WorldError, WorldSession};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn key(b: u8) -> SecretKey {
    SecretKey::from_bytes([b; 32])
}

fn keys() -> RoleKeys {
    RoleKeys {
        third_party: key(0x11),
        engineer: key(0x22),
        administrator: key(0x33),
        scheduler: key(0x44),
    }
}

fn policy() -> AssetPolicy {
    AssetPolicy {
        asset_id: 1,
        endpoint: "127.0.0.1:15020".into(),
        unit_id: 1,
        register_space: RegisterRange::new(0x0000, 0x03FF).unwrap(),
        confidential_ranges: vec![RegisterRange::new(0x0100, 0x01FF).unwrap()],
        device_key: key(0xA5),
    }
}

fn brute_force_confidential(p: &AssetPolicy, addr: u32, len: u32) -> bool {
    (addr..addr + len).any(|a| p.confidential_ranges.iter().any(|r| a >= r.lo().into() && a <= r.hi().into()))
}

#[test]
fn segregation_exhaustive_over_register_space() {
    let p = policy();
    let book = PolicyBook::new([p.clone()]);
    let space = p.register_space.len();
    for addr in 0..space {
        for len in 1..=(space - addr) {
            let d = book
                .validate_address(1, addr as u16, len as u16, AccessKind::Read, Privilege::NonConfidentialOnly)
                .unwrap();
            let overlap = brute_force_confidential(&p, addr, len);
            assert_eq!(d.is_allow(), !overlap, "addr={addr:#x} len={len}");
            if overlap {
                assert_eq!(d, AccessDecision::Deny(DenyReason::ConfidentialOverlap));
            }
        }
    }
}

proptest! {
    #[test]
    fn full_privilege_only_checks_bounds(addr in 0u16..=0x0500, len in 1u16..=0x0500) {
        let p = policy();
        let book = PolicyBook::new([p.clone()]);
        let d = book.validate_address(1, addr, len, AccessKind::Write, Privilege::Full).unwrap();
        let inside = u32::from(addr) + u32::from(len) - 1 <= 0x03FF;
        prop_assert_eq!(d.is_allow(), inside);
    }

    #[test]
    fn every_denial_carries_one_reason(addr: u16, len in 1u16.., full: bool) {
        let book = PolicyBook::new([policy()]);
        let privilege = if full { Privilege::Full } else { Privilege::NonConfidentialOnly };
        let d = book.validate_address(1, addr, len, AccessKind::Read, privilege).unwrap();
        prop_assert_eq!(d.is_allow(), d.reason().is_none());
    }
}

/// HMAC-SHA256 built by hand from the RFC 2104 construction.
fn hmac_oracle(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut k = [0u8; 64];
    if key.len() > 64 {
        k[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
    let inner = Sha256::new().chain_update(&ipad).chain_update(msg).finalize();
    Sha256::new().chain_update(&opad).chain_update(inner).finalize().into()
}

#[test]
fn hmac_oracle_matches_rfc4231_case_2() {
    let mac = hmac_oracle(b"Jefe", b"what do ya want for nothing?");
    assert_eq!(
        hex::encode(mac),
        "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
    );
}

#[test]
fn firmware_proof_verification() {
    let p = policy();
    let book = PolicyBook::new([p.clone()]);
    let image: Vec<u8> = (0..3000u32).map(|i| (i % 251) as u8).collect();
    let digest = Sha256::digest(&image);
    let proof = hmac_oracle(p.device_key.as_bytes(), &digest);
    assert_eq!(install_proof(&p.device_key, &digest), proof);
    assert_eq!(book.verify_firmware_proof(1, &digest, &proof), Ok(AccessDecision::Allow));

    let mut tampered = digest;
    tampered[0] ^= 1;
    assert_eq!(
        book.verify_firmware_proof(1, &tampered, &proof),
        Ok(AccessDecision::Deny(DenyReason::ProofMismatch))
    );
    assert_eq!(
        book.verify_firmware_proof(1, &[], &proof),
        Ok(AccessDecision::Deny(DenyReason::ZeroLength))
    );
    assert!(book.verify_firmware_proof(2, &digest, &proof).is_err());
}

#[test]
fn key_validation_examples() {
    let k = keys();
    assert_eq!(validate_key(&k, &k.engineer.to_hex(), Role::Engineer), AccessDecision::Allow);
    assert_eq!(
        validate_key(&k, &k.engineer.to_hex(), Role::Administrator),
        AccessDecision::Deny(DenyReason::BadKey)
    );
    assert_eq!(
        validate_key(&k, &"00".repeat(32), Role::Engineer),
        AccessDecision::Deny(DenyReason::BadKey)
    );
    assert_eq!(validate_key(&k, "zz", Role::Engineer), AccessDecision::Deny(DenyReason::BadKey));
    for role in Role::ALL {
        for other in Role::ALL {
            let d = validate_key(&k, &k.get(other).to_hex(), role);
            assert_eq!(d.is_allow(), role == other);
        }
    }
}

#[test]
fn config_rejects_bad_policies() {
    let mut p = policy();
    p.confidential_ranges.push(RegisterRange::new(0x01F0, 0x0200).unwrap());
    assert!(p.check().is_err());
    let mut p = policy();
    p.confidential_ranges = vec![RegisterRange::new(0x0300, 0x0400).unwrap()];
    assert!(p.check().is_err());
}

struct Sw {
    dir: tempfile::TempDir,
    image: PathBuf,
    cfg: SwConfig,
    server: Option<SecureWorldServer>,
}

impl Sw {
    fn new(mode: MeasurementMode) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let image = dir.path().join("gateway.img");
        std::fs::write(&image, b"gateway image").unwrap();
        let cfg = SwConfig {
            socket: dir.path().join("sw.sock"),
            mode,
            storage_dir: dir.path().join("sw"),
            hash_algorithm: HashAlgorithm::Sha1,
            audit_capacity: None,
            keys: keys(),
            assets: vec![policy()],
        };
        if mode == MeasurementMode::Normal {
            train_offline(&cfg, SECURITY_MANAGER_TA, &image).unwrap();
        }
        let mut sw = Sw {
            dir,
            image,
            cfg,
            server: None,
        };
        sw.start();
        sw
    }

    fn start(&mut self) {
        self.server = None;
        let world = build_world(&self.cfg, Arc::new(SystemClock::new())).unwrap();
        self.server = Some(world.listen(&self.cfg.socket).unwrap());
    }

    fn session(&self) -> (WorldContext, WorldSession) {
        let ctx = WorldContext::initialize(&self.cfg.socket).unwrap();
        let s = ctx.open_session(SECURITY_MANAGER_TA, &self.image).unwrap();
        (ctx, s)
    }
}

fn call<Q: serde::Serialize, A: serde::de::DeserializeOwned>(s: &WorldSession, cmd: u32, req: &Q) -> Result<A, WorldError> {
    let mut c = WorldCommand::with_params(
        cmd,
        vec![Parameter::input(serde_json::to_vec(req).unwrap()), Parameter::output()],
    )
    .unwrap();
    let out = s.invoke(&mut c)?;
    Ok(serde_json::from_slice(&out[0]).unwrap())
}

#[test]
fn decisions_over_the_channel_are_audited() {
    let sw = Sw::new(MeasurementMode::Normal);
    let (_ctx, s) = sw.session();
    assert!(s.is_attested());

    let r: DecisionResponse = call(
        &s,
        CMD_VALIDATE_ADDRESS,
        &ValidateAddressRequest {
            principal: "alice".into(),
            asset_id: 1,
            addr: 0x00FE,
            length: 4,
            access: AccessKind::Read,
            privilege: Privilege::NonConfidentialOnly,
        },
    )
    .unwrap();
    assert_eq!(r.decision, AccessDecision::Deny(DenyReason::ConfidentialOverlap));

    let r: DecisionResponse = call(
        &s,
        CMD_VALIDATE_ADDRESS,
        &ValidateAddressRequest {
            principal: "alice".into(),
            asset_id: 42,
            addr: 0,
            length: 1,
            access: AccessKind::Read,
            privilege: Privilege::Full,
        },
    )
    .unwrap();
    assert_eq!(r.decision, AccessDecision::Deny(DenyReason::UnknownAsset));

    let r: DecisionResponse = call(
        &s,
        CMD_VALIDATE_KEY,
        &ValidateKeyRequest {
            principal: "bob".into(),
            key: keys().engineer.to_hex(),
            role: Role::Engineer,
        },
    )
    .unwrap();
    assert!(r.decision.is_allow());

    let d: DescribeAssetResponse = call(
        &s,
        CMD_DESCRIBE_ASSET,
        &DescribeAssetRequest {
            principal: "bob".into(),
            asset_id: 1,
        },
    )
    .unwrap();
    let asset = d.asset.unwrap();
    assert!(asset.is_confidential(0x0100));
    assert!(!asset.is_confidential(0x0200));

    let records = read_file(&sw.cfg.audit_log()).unwrap();
    let sm: Vec<_> = records.iter().filter(|r| r.activity.starts_with("sm.")).collect();
    assert_eq!(
        sm.iter().map(|r| r.activity.as_str()).collect::<Vec<_>>(),
        ["sm.validate_address", "sm.validate_address", "sm.validate_key", "sm.describe_asset"]
    );
    assert_eq!(sm[0].outcome, Some(Outcome::Denied));
    assert_eq!(sm[0].reason(), Some("confidential_overlap"));
    assert_eq!(sm[0].principal, "alice");
    // The key itself never reaches the log.
    let text = std::fs::read_to_string(sw.cfg.audit_log()).unwrap();
    assert!(!text.contains(&keys().engineer.to_hex()));
}

#[test]
fn storage_key_is_stable_and_needs_attestation() {
    let mut sw = Sw::new(MeasurementMode::Normal);
    let fetch = |s: &WorldSession| {
        let mut c = WorldCommand::new(CMD_ISSUE_STORAGE_KEY).param(Parameter::output()).unwrap();
        s.invoke(&mut c).map(|o| o[0].clone())
    };
    let (c, s) = sw.session();
    let k1 = fetch(&s).unwrap();
    let k2 = fetch(&s).unwrap();
    assert_eq!(k1.len(), 32);
    assert_eq!(k1, k2);
    drop(s);
    drop(c);
    std::thread::sleep(std::time::Duration::from_millis(50));
    sw.start();
    let (_c, s) = sw.session();
    assert_eq!(fetch(&s).unwrap(), k1);
    drop(s);

    let training = Sw::new(MeasurementMode::Training);
    let (_c, s) = training.session();
    assert!(!s.is_attested());
    assert!(matches!(
        fetch(&s),
        Err(WorldError::HandlerError { code }) if code == code::ACCESS_DENIED
    ));
    let _ = &training.dir;
}

#[test]
fn secure_audit_sequence_survives_restart() {
    let mut sw = Sw::new(MeasurementMode::Normal);
    let append = |s: &WorldSession, detail: &str| -> u64 {
        let ack: AuditAck = call(
            s,
            CMD_SECURE_AUDIT,
            &SecureAuditRequest {
                principal: "system".into(),
                activity: "note".into(),
                outcome: None,
                detail: detail.into(),
            },
        )
        .unwrap();
        ack.seq
    };
    let (c, s) = sw.session();
    let a = append(&s, "");
    let b = append(&s, "second");
    assert_eq!(b, a + 1);
    drop(s);
    drop(c);
    std::thread::sleep(std::time::Duration::from_millis(50));
    sw.start();
    let (_c, s) = sw.session();
    let c = append(&s, "after restart");
    assert!(c > b);
    let records = read_file(&sw.cfg.audit_log()).unwrap();
    check_monotonic(&records).unwrap();
    for w in records.windows(2) {
        assert_eq!(w[1].seq, w[0].seq + 1);
    }
}

#[test]
fn storage_full_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("img");
    std::fs::write(&image, b"x").unwrap();
    let cfg = SwConfig {
        socket: dir.path().join("sw.sock"),
        mode: MeasurementMode::Normal,
        storage_dir: dir.path().join("sw"),
        hash_algorithm: HashAlgorithm::Sha256,
        audit_capacity: Some(2048),
        keys: keys(),
        assets: vec![policy()],
    };
    train_offline(&cfg, SECURITY_MANAGER_TA, &image).unwrap();
    let world = build_world(&cfg, Arc::new(SystemClock::new())).unwrap();
    let _srv = world.listen(&cfg.socket).unwrap();
    let ctx = WorldContext::initialize(&cfg.socket).unwrap();
    let s = ctx.open_session(SECURITY_MANAGER_TA, &image).unwrap();
    let mut saw_full = false;
    for _ in 0..64 {
        let r: Result<AuditAck, _> = call(
            &s,
            CMD_SECURE_AUDIT,
            &SecureAuditRequest {
                principal: "system".into(),
                activity: "fill".into(),
                outcome: None,
                detail: "x".repeat(64),
            },
        );
        if let Err(WorldError::HandlerError { code }) = r {
            assert_eq!(code, code::STORAGE_NO_SPACE);
            saw_full = true;
            break;
        }
    }
    assert!(saw_full);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = SwConfig {
        socket: "/tmp/sw.sock".into(),
        mode: MeasurementMode::Training,
        storage_dir: "/tmp/sw".into(),
        hash_algorithm: HashAlgorithm::Sha1,
        audit_capacity: None,
        keys: keys(),
        assets: vec![policy()],
    };
    let text = cfg.to_toml();
    let back: SwConfig = toml::from_str(&text).unwrap();
    assert_eq!(back.assets[0].confidential_ranges, cfg.assets[0].confidential_ranges);
    assert_eq!(back.keys.engineer, cfg.keys.engineer);
}
