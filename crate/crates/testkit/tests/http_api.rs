// SPDX-License-Identifier: Apache-2.0

use ecig_core::access::Role;
use ecig_testkit::oracle::{hex, sha256};
use ecig_testkit::{password, user_id, Fixture, Options};
use serde_json::json;

fn fixture() -> Fixture {
    Fixture::start(Options::default())
}

#[test]
fn login_failures_look_alike() {
    let fx = fixture();
    let mut c = fx.client();
    let (s1, b1) = c.login("nobody", "whatever");
    let (s2, b2) = c.login(user_id(Role::Engineer), "wrong");
    assert_eq!((s1, s2), (401, 401));
    assert_eq!(b1, b2);
    assert_eq!(b1["error"], "BadCredentials");
    let (s, body) = c.login(user_id(Role::Engineer), &password(Role::Engineer));
    assert_eq!(s, 200);
    assert_eq!(body["role"], "engineer");
    let logins: Vec<_> = fx.nw_log().into_iter().filter(|r| r.activity == "auth.login").collect();
    assert_eq!(logins.len(), 3);
}

#[test]
fn requests_without_a_valid_token_are_rejected() {
    let fx = fixture();
    let mut c = fx.client();
    assert_eq!(c.command("read 1 0x0010 1").0, 401);
    c.token = Some("forged".into());
    let (s, body) = c.get("/api/v1/records");
    assert_eq!((s, body["error"].as_str()), (401, Some("BadToken")));
    assert!(fx.nw_log().iter().any(|r| r.activity == "auth.token" && r.principal == "anonymous"));
}

#[test]
fn command_statuses_follow_the_outcome() {
    let fx = fixture();
    let c = fx.login(Role::ThirdParty);
    let (s, body) = c.command("read 1 0x0020 1");
    assert_eq!(s, 200, "{body}");
    assert_eq!(body["payload"]["words"], json!([0xBEEF]));
    assert!(body["audit_ids"].as_array().unwrap().len() >= 2);

    let (s, body) = c.command("read 1 0x0100 1");
    assert_eq!((s, body["status"].as_str(), body["reason"].as_str()), (403, Some("denied"), Some("confidential_overlap")));

    let (s, body) = c.command("read_s 00 1 0 1");
    assert_eq!(s, 400);
    assert_eq!(body["error"], "BadKeyLength");
    let (s, body) = c.command("frobnicate");
    assert_eq!((s, body["error"].as_str()), (400, Some("UnknownVerb")));

    let (s, body) = c.command("update 1 missing.bin");
    assert_eq!((s, body["reason"].as_str()), (502, Some("file_not_found")));
    assert!(fx.nw_log().iter().any(|r| r.activity == "cp.parse"));
}

#[test]
fn raw_keys_never_reach_the_log() {
    let fx = fixture();
    let c = fx.login(Role::Engineer);
    let k = fx.key(Role::Engineer).to_hex();
    assert_eq!(c.command(&format!("read_s {k} 1 0x0100 2")).0, 200);
    let raw = std::fs::read_to_string(fx.gw_cfg.data_dir.join("logs/nw.log")).unwrap();
    assert!(!raw.contains(&k));
}

#[test]
fn firmware_upload_and_update() {
    let fx = Fixture::start(Options {
        firmware_cap_bytes: 4096,
        ..Options::default()
    });
    let tp = fx.login(Role::ThirdParty);
    let image = vec![0x42u8; 3000];
    let (s, body) = tp.post_bytes("/api/v1/firmware/plc-1.bin", &image);
    assert_eq!(s, 200, "{body}");
    assert_eq!(body["bytes"], 3000);
    assert_eq!(body["sha256"], hex(&sha256(&image)));
    let (s, body) = tp.command("update 1 plc-1.bin");
    assert_eq!(s, 200, "{body}");
    assert_eq!(body["payload"]["digest"], hex(&sha256(&image)));

    let (s, body) = tp.post_bytes("/api/v1/firmware/big.bin", &vec![0; 4097]);
    assert_eq!((s, body["error"].as_str()), (413, Some("TooLarge")));
    assert!(!fx.gw_cfg.staging_dir().join("big.bin").exists());
    let (s, body) = tp.post_bytes("/api/v1/firmware/.hidden", b"x");
    assert_eq!((s, body["error"].as_str()), (400, Some("BadName")));
    let (s, body) = tp.post_bytes("/api/v1/firmware/a%2Fb.bin", b"x");
    assert_eq!((s, body["error"].as_str()), (400, Some("BadName")));

    let admin = fx.login(Role::Administrator);
    let (s, body) = admin.post_bytes("/api/v1/firmware/x.bin", b"x");
    assert_eq!((s, body["error"].as_str()), (403, Some("RoleForbidden")));
}

#[test]
fn records_respect_privilege() {
    let fx = fixture();
    let eng = fx.login(Role::Engineer);
    let k = fx.key(Role::Engineer).to_hex();
    assert_eq!(eng.command(&format!("store_s {k} 1")).0, 200);

    let (s, body) = eng.get("/api/v1/records");
    assert_eq!(s, 200);
    assert_eq!(body["records"].as_array().unwrap().len(), 2);
    let (_, body) = eng.get("/api/v1/records?category=confidential&asset=1");
    let recs = body["records"].as_array().unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["snapshot"].as_object().unwrap().len(), 256);

    let tp = fx.login(Role::ThirdParty);
    let (s, body) = tp.get("/api/v1/records?category=confidential");
    assert_eq!((s, body["error"].as_str()), (403, Some("RoleForbidden")));
    let (s, body) = tp.get("/api/v1/records");
    assert_eq!(s, 200);
    let recs = body["records"].as_array().unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["category"], "non_confidential");

    let (s, body) = eng.get("/api/v1/records?from=0&to=1");
    assert_eq!((s, body["records"].as_array().unwrap().len()), (200, 0));
    let (s, body) = eng.get("/api/v1/records?category=secret");
    assert_eq!((s, body["error"].as_str()), (400, Some("BadCategory")));
}

#[test]
fn profiles_are_admin_only() {
    let fx = fixture();
    let admin = fx.login(Role::Administrator);
    let (s, body) = admin.get("/api/v1/threat-profiles/latest");
    assert_eq!((s, body["error"].as_str()), (404, Some("NotFound")));
    let k = fx.key(Role::Administrator).to_hex();
    let (s, body) = admin.command(&format!("gen_threat_profile_s {k}"));
    assert_eq!(s, 200, "{body}");
    let id = body["payload"]["profile_id"].as_u64().unwrap();

    let (s, latest) = admin.get("/api/v1/threat-profiles/latest");
    assert_eq!(s, 200);
    assert_eq!(latest["profile_id"], id);
    assert_eq!(
        latest["profile"]["tree"]["clients"].as_array().unwrap().len() as u64,
        body["payload"]["clients"].as_u64().unwrap()
    );
    assert_eq!(admin.get(&format!("/api/v1/threat-profiles/{id}")).1, latest);
    assert_eq!(admin.get("/api/v1/threat-profiles/999").0, 404);

    let eng = fx.login(Role::Engineer);
    assert_eq!(eng.get("/api/v1/threat-profiles/latest").0, 403);
}

#[test]
fn health_reports_attestation() {
    let fx = fixture();
    let (s, body) = fx.client().get("/api/v1/health");
    assert_eq!(s, 200);
    assert_eq!(body, json!({"status": "ok", "attested": true}));
}
