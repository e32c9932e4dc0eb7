// SPDX-License-Identifier: Apache-2.0

use ecig_core::access::Role;
use ecig_testkit::oracle::{hex, sha256};
use ecig_testkit::{password, user_id, Fixture, Options};

struct Cli<'a> {
    fx: &'a Fixture,
    token_file: std::path::PathBuf,
}

impl<'a> Cli<'a> {
    fn new(fx: &'a Fixture, name: &str) -> Self {
        Self {
            fx,
            token_file: fx.dir.path().join(format!("{name}.token")),
        }
    }

    fn run(&self, args: &[&str]) -> (i32, String, String) {
        let mut argv = vec![
            "opcli".to_owned(),
            "--server".into(),
            self.fx.base_url(),
            "--token-file".into(),
            self.token_file.to_string_lossy().into_owned(),
            "--output".into(),
            "machine".into(),
        ];
        argv.extend(args.iter().map(|s| s.to_string()));
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = ecig_opcli::run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    fn login(&self, role: Role) {
        let pw = password(role);
        let (code, out, err) = self.run(&["login", "--user", user_id(role), "--password", &pw]);
        assert_eq!(code, 0, "{err}");
        assert!(out.starts_with(&format!("logged_in user_id={} role={role}", user_id(role))));
    }
}

/// Strips the trailing `audit` line, whose ids depend on log history.
fn without_audit(s: &str) -> String {
    s.lines()
        .filter(|l| !l.starts_with("audit "))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[test]
fn machine_output_golden() {
    let fx = Fixture::start(Options::default());
    let tp = Cli::new(&fx, "tp");
    tp.login(Role::ThirdParty);

    let (code, out, _) = tp.run(&["cmd", "read 1 0x0020 1"]);
    assert_eq!(code, 0);
    assert_eq!(without_audit(&out), "status ok\nword 0x0020 BEEF\n");
    assert!(out.lines().last().unwrap().starts_with("audit "));

    let (code, out, _) = tp.run(&["cmd", "write 1 0x0030 2 0001 00FF"]);
    assert_eq!(code, 0);
    assert_eq!(without_audit(&out), "status ok\nwritten asset=1 addr=0x0030 count=2\n");
    let (_, out, _) = tp.run(&["cmd", "read 1 0x0030 2"]);
    assert_eq!(without_audit(&out), "status ok\nword 0x0030 0001\nword 0x0031 00FF\n");

    let (code, _, err) = tp.run(&["cmd", "read 1 0x0100 1"]);
    assert_eq!(code, 1);
    assert_eq!(without_audit(&err), "status denied\nreason confidential_overlap\n");

    let (code, _, err) = tp.run(&["cmd", "read 1 zz 1"]);
    assert_eq!(code, 1);
    assert_eq!(err.lines().take(3).collect::<Vec<_>>(), ["status error", "http 400", "code BadNumber"]);

    let (code, _, err) = tp.run(&["cmd", "update 1 none.bin"]);
    assert_eq!(code, 2);
    assert!(without_audit(&err).starts_with("status failed\nreason file_not_found\ndetail "));

    let image = fx.dir.path().join("fw.bin");
    std::fs::write(&image, [7u8; 1500]).unwrap();
    let (code, out, _) = tp.run(&["upload", image.to_str().unwrap(), "--name", "fw-7.bin"]);
    assert_eq!(code, 0);
    let digest = hex(&sha256(&[7u8; 1500]));
    assert_eq!(out, format!("staged filename=fw-7.bin bytes=1500 sha256={digest}\n"));
    let (code, out, _) = tp.run(&["cmd", "update 1 fw-7.bin"]);
    assert_eq!(code, 0);
    assert!(out.starts_with(&format!("status ok\ninstalled asset=1 file=fw-7.bin digest={digest} proof=")));

    let (code, out, _) = tp.run(&["health"]);
    assert_eq!((code, out.as_str()), (0, "health status=ok attested=true\n"));
}

#[test]
fn records_and_profiles_through_the_cli() {
    let fx = Fixture::start(Options::default());
    let eng = Cli::new(&fx, "eng");
    eng.login(Role::Engineer);
    let k = fx.key(Role::Engineer).to_hex();
    let (code, out, _) = eng.run(&["cmd", &format!("store_s {k} 1")]);
    assert_eq!(code, 0);
    assert_eq!(
        without_audit(&out),
        "status ok\nstored record=1 asset=1 category=confidential registers=256\n\
         stored record=2 asset=1 category=non_confidential registers=768\n"
    );
    let (code, out, _) = eng.run(&["records", "--asset", "1"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().last(), Some("count 2"));
    assert!(out.contains("category=confidential"));

    let admin = Cli::new(&fx, "admin");
    admin.login(Role::Administrator);
    let (code, _, err) = admin.run(&["profiles", "latest"]);
    assert_eq!(code, 1);
    assert!(err.contains("code NotFound"));
    let ka = fx.key(Role::Administrator).to_hex();
    let (code, out, _) = admin.run(&["cmd", &format!("gen_threat_profile_s {ka}")]);
    assert_eq!(code, 0);
    assert!(out.contains("profile id=1 clients=3 anomalies=0\n"), "{out}");
    let (code, out, _) = admin.run(&["profiles", "get", "1"]);
    assert_eq!(code, 0);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("profile 1"));
    let doc: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(doc["tree"]["clients"].as_array().unwrap().len(), 3);

    let (code, _, err) = eng.run(&["profiles", "latest"]);
    assert_eq!(code, 1);
    assert!(err.contains("code RoleForbidden"));
}

#[test]
fn missing_token_is_a_client_error() {
    let fx = Fixture::start(Options::default());
    let cli = Cli::new(&fx, "none");
    let (code, _, err) = cli.run(&["cmd", "read 1 0 1"]);
    assert_eq!(code, 1);
    assert!(err.contains("code BadToken"));
    let (code, _, err) = cli.run(&["login", "--user", "vendor", "--password", "nope"]);
    assert_eq!(code, 1);
    assert!(err.contains("code BadCredentials"));
    assert!(!cli.token_file.exists());
}
