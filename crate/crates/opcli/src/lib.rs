// SPDX-License-Identifier: Apache-2.0

//! Operator client for the gateway REST API.
//!
//! Exit codes: `0` for HTTP 2xx, `1` for 4xx, `2` for 5xx, transport
//! failures and anything else. Machine output is line oriented, one
//! space-separated record per line, and stays stable.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8080";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputMode {
    Human,
    Machine,
}

#[derive(Debug, Parser)]
#[command(name = "opcli", version, about = "Edge gateway operator client")]
pub struct Cli {
    /// Gateway base URL.
    #[arg(long, env = "OPCLI_SERVER", default_value = DEFAULT_SERVER)]
    pub server: String,
    /// Bearer token; overrides the cached one.
    #[arg(long, env = "OPCLI_TOKEN")]
    pub token: Option<String>,
    /// Where `login` caches the token.
    #[arg(long, env = "OPCLI_TOKEN_FILE")]
    pub token_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputMode::Human)]
    pub output: OutputMode,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Authenticate and cache the token.
    Login {
        #[arg(long)]
        user: String,
        /// Password; read from stdin when omitted.
        #[arg(long)]
        password: Option<String>,
    },
    /// Submit one command line, e.g. `read 1 0x0010 2`.
    Cmd { line: String },
    /// Stage a firmware image on the gateway.
    Upload {
        file: PathBuf,
        /// Name on the gateway; defaults to the file name.
        #[arg(long)]
        name: Option<String>,
    },
    /// List stored records.
    Records {
        #[arg(long)]
        asset: Option<u32>,
        #[arg(long)]
        category: Option<String>,
        /// Start of the capture window, UTC milliseconds.
        #[arg(long)]
        from: Option<i64>,
        /// End of the capture window, UTC milliseconds.
        #[arg(long)]
        to: Option<i64>,
    },
    /// Fetch threat profiles.
    Profiles {
        #[command(subcommand)]
        which: ProfileSel,
    },
    /// Gateway liveness.
    Health,
}

#[derive(Debug, Subcommand)]
pub enum ProfileSel {
    Latest,
    Get { id: u64 },
}

/// Maps an HTTP status to the process exit code.
pub fn exit_code(status: u16) -> i32 {
    match status {
        200..=299 => 0,
        400..=499 => 1,
        _ => 2,
    }
}

fn default_token_file() -> PathBuf {
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".config").join("ecig").join("opcli-token")
}

fn save_token(path: &Path, token: &str) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
    let mut f = opts.open(path)?;
    // The mode above only applies to newly created files.
    #[cfg(unix)]
    f.set_permissions(std::os::unix::fs::PermissionsExt::from_mode(0o600))?;
    f.write_all(token.as_bytes())
}

struct Http {
    base: String,
    agent: ureq::Agent,
    token: Option<String>,
}

type Reply = Result<(u16, Value), String>;
type Render = fn(OutputMode, u16, &Value) -> String;

impl Http {
    fn new(base: &str, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            base: base.trim_end_matches('/').to_owned(),
            agent,
            token,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn bearer(&self) -> String {
        format!("Bearer {}", self.token.as_deref().unwrap_or(""))
    }

    fn finish(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
        let mut r = r.map_err(|e| e.to_string())?;
        let status = r.status().as_u16();
        let text = r.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, serde_json::from_str(&text).unwrap_or(Value::String(text))))
    }

    fn post_json(&self, path: &str, body: &Value) -> Reply {
        Self::finish(
            self.agent
                .post(self.url(path))
                .header("content-type", "application/json")
                .header("authorization", self.bearer())
                .send(body.to_string()),
        )
    }

    fn post_bytes(&self, path: &str, body: &[u8]) -> Reply {
        Self::finish(
            self.agent
                .post(self.url(path))
                .header("content-type", "application/octet-stream")
                .header("authorization", self.bearer())
                .send(body),
        )
    }

    fn get(&self, path: &str) -> Reply {
        Self::finish(
            self.agent
                .get(self.url(path))
                .header("authorization", self.bearer())
                .call(),
        )
    }
}

/// Percent-encodes one path segment.
fn encode_segment(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn s(v: &Value, key: &str) -> String {
    match &v[key] {
        Value::String(x) => x.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn u(v: &Value, key: &str) -> u64 {
    v[key].as_u64().unwrap_or(0)
}

/// Renders an error body (`{"error", "message"}`) or a non-JSON body.
fn render_error(mode: OutputMode, status: u16, body: &Value) -> String {
    let (code, message) = match body {
        Value::Object(_) => (s(body, "error"), s(body, "message")),
        other => ("Http".to_owned(), other.as_str().unwrap_or_default().to_owned()),
    };
    match mode {
        OutputMode::Machine => format!("status error\nhttp {status}\ncode {code}\nmessage {message}\n"),
        OutputMode::Human => format!("error {status} {code}: {message}\n"),
    }
}

/// Renders the answer to a submitted command.
pub fn render_command(mode: OutputMode, status: u16, body: &Value) -> String {
    if body.get("status").is_none() {
        return render_error(mode, status, body);
    }
    let ids: Vec<String> = body["audit_ids"]
        .as_array()
        .map(|a| a.iter().map(|x| x.to_string()).collect())
        .unwrap_or_default();
    let mut out = String::new();
    match (mode, s(body, "status").as_str()) {
        (OutputMode::Machine, st) => {
            out += &format!("status {st}\n");
            if st != "ok" {
                out += &format!("reason {}\n", s(body, "reason"));
                if st == "failed" {
                    out += &format!("detail {}\n", s(body, "detail"));
                }
            }
        }
        (OutputMode::Human, "ok") => {}
        (OutputMode::Human, "denied") => out += &format!("denied: {}\n", s(body, "reason")),
        (OutputMode::Human, st) => out += &format!("{st}: {} ({})\n", s(body, "reason"), s(body, "detail")),
    }
    let p = &body["payload"];
    match s(p, "kind").as_str() {
        "registers" => {
            let addr = u(p, "addr");
            for (i, w) in p["words"].as_array().into_iter().flatten().enumerate() {
                let a = addr + i as u64;
                let w = w.as_u64().unwrap_or(0);
                out += &match mode {
                    OutputMode::Machine => format!("word {a:#06x} {w:04X}\n"),
                    OutputMode::Human => format!("{a:#06x}  {w:04X}\n"),
                };
            }
        }
        "written" => {
            out += &format!(
                "written asset={} addr={:#06x} count={}\n",
                u(p, "asset_id"),
                u(p, "addr"),
                u(p, "count")
            );
        }
        "install_proof" => {
            out += &format!(
                "installed asset={} file={} digest={} proof={}\n",
                u(p, "asset_id"),
                s(p, "filename"),
                s(p, "digest"),
                s(p, "proof")
            );
        }
        "records" => {
            for r in p["receipts"].as_array().into_iter().flatten() {
                out += &format!(
                    "stored record={} asset={} category={} registers={}\n",
                    u(r, "record_id"),
                    u(r, "asset_id"),
                    s(r, "category"),
                    u(r, "registers")
                );
            }
        }
        "profile" => {
            out += &format!(
                "profile id={} clients={} anomalies={}\n",
                u(p, "profile_id"),
                u(p, "clients"),
                u(p, "anomalies")
            );
        }
        _ => {}
    }
    if mode == OutputMode::Machine {
        out += &format!("audit {}\n", ids.join(","));
    }
    out
}

pub fn render_records(mode: OutputMode, status: u16, body: &Value) -> String {
    let Some(records) = body["records"].as_array() else {
        return render_error(mode, status, body);
    };
    let mut out = String::new();
    for r in records {
        let regs = r["snapshot"].as_object().map_or(0, |m| m.len());
        out += &match mode {
            OutputMode::Machine => format!(
                "record id={} asset={} category={} captured_at={} registers={regs}\n",
                u(r, "record_id"),
                u(r, "asset_id"),
                s(r, "category"),
                r["captured_at"],
            ),
            OutputMode::Human => format!(
                "#{:<6} asset {:<4} {:<17} {:>5} registers  captured {}\n",
                u(r, "record_id"),
                u(r, "asset_id"),
                s(r, "category"),
                regs,
                r["captured_at"],
            ),
        };
    }
    if mode == OutputMode::Machine {
        out += &format!("count {}\n", records.len());
    } else if records.is_empty() {
        out += "no records\n";
    }
    out
}

pub fn render_profile(mode: OutputMode, status: u16, body: &Value) -> String {
    if body.get("profile").is_none() {
        return render_error(mode, status, body);
    }
    match mode {
        OutputMode::Machine => format!("profile {}\n{}\n", u(body, "profile_id"), body["profile"]),
        OutputMode::Human => format!(
            "profile #{}\n{}\n",
            u(body, "profile_id"),
            serde_json::to_string_pretty(&body["profile"]).unwrap_or_default()
        ),
    }
}

fn render_simple(mode: OutputMode, status: u16, body: &Value, fields: &[&str], label: &str) -> String {
    if !(200..300).contains(&status) {
        return render_error(mode, status, body);
    }
    let parts: Vec<String> = fields.iter().map(|f| format!("{f}={}", s(body, f))).collect();
    format!("{label} {}\n", parts.join(" "))
}

/// Runs the client with `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let token_file = cli.token_file.clone().unwrap_or_else(default_token_file);
    let token = cli
        .token
        .clone()
        .or_else(|| fs::read_to_string(&token_file).ok().map(|t| t.trim().to_owned()));
    let http = Http::new(&cli.server, token);
    let mode = cli.output;

    let (reply, render): (Reply, Render) = match &cli.cmd {
        Cmd::Login { user, password } => {
            let password = match password {
                Some(p) => p.clone(),
                None => {
                    let mut p = String::new();
                    if io::stdin().read_to_string(&mut p).is_err() {
                        let _ = writeln!(err, "opcli: cannot read password from stdin");
                        return 2;
                    }
                    p.trim_end_matches(['\r', '\n']).to_owned()
                }
            };
            let r = http.post_json("/api/v1/auth/login", &json!({ "user_id": user, "password": password }));
            if let Ok((200, body)) = &r {
                if let Err(e) = save_token(&token_file, &s(body, "token")) {
                    let _ = writeln!(err, "opcli: cannot cache token in {}: {e}", token_file.display());
                    return 2;
                }
            }
            (r, |m, st, b| render_simple(m, st, b, &["user_id", "role", "expires_at"], "logged_in"))
        }
        Cmd::Cmd { line } => (
            http.post_json("/api/v1/command", &json!({ "command": line })),
            render_command,
        ),
        Cmd::Upload { file, name } => {
            let bytes = match fs::read(file) {
                Ok(b) => b,
                Err(e) => {
                    let _ = writeln!(err, "opcli: {}: {e}", file.display());
                    return 2;
                }
            };
            let name = name.clone().unwrap_or_else(|| {
                file.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            (
                http.post_bytes(&format!("/api/v1/firmware/{}", encode_segment(&name)), &bytes),
                |m, st, b| render_simple(m, st, b, &["filename", "bytes", "sha256"], "staged"),
            )
        }
        Cmd::Records {
            asset,
            category,
            from,
            to,
        } => {
            let mut q = Vec::new();
            if let Some(a) = asset {
                q.push(format!("asset={a}"));
            }
            if let Some(c) = category {
                q.push(format!("category={}", encode_segment(c)));
            }
            if let Some(f) = from {
                q.push(format!("from={f}"));
            }
            if let Some(t) = to {
                q.push(format!("to={t}"));
            }
            let path = if q.is_empty() {
                "/api/v1/records".to_owned()
            } else {
                format!("/api/v1/records?{}", q.join("&"))
            };
            (http.get(&path), render_records)
        }
        Cmd::Profiles { which } => {
            let path = match which {
                ProfileSel::Latest => "/api/v1/threat-profiles/latest".to_owned(),
                ProfileSel::Get { id } => format!("/api/v1/threat-profiles/{id}"),
            };
            (http.get(&path), render_profile)
        }
        Cmd::Health => (http.get("/api/v1/health"), |m, st, b| {
            render_simple(m, st, b, &["status", "attested"], "health")
        }),
    };

    match reply {
        Ok((status, body)) => {
            let text = render(mode, status, &body);
            let code = exit_code(status);
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = sink.write_all(text.as_bytes());
            code
        }
        Err(e) => {
            let _ = writeln!(err, "opcli: cannot reach {}: {e}", cli.server);
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_cover_every_class() {
        for st in 100..600u16 {
            let expect = match st / 100 {
                2 => 0,
                4 => 1,
                _ => 2,
            };
            assert_eq!(exit_code(st), expect, "{st}");
        }
    }

    #[test]
    fn segments_are_escaped() {
        assert_eq!(encode_segment("fw-1.bin"), "fw-1.bin");
        assert_eq!(encode_segment("../x"), "..%2Fx");
    }

    #[test]
    fn human_register_rendering() {
        let body = json!({"status": "ok", "audit_ids": [1], "payload": {"kind": "registers", "asset_id": 1, "addr": 16, "words": [48879, 1]}});
        assert_eq!(render_command(OutputMode::Human, 200, &body), "0x0010  BEEF\n0x0011  0001\n");
    }

    #[test]
    fn unreachable_server_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            [
                "opcli",
                "--server",
                &format!("http://127.0.0.1:{port}"),
                "--token-file",
                dir.path().join("t").to_str().unwrap(),
                "health",
            ],
            &mut out,
            &mut err,
        );
        assert_eq!(code, 2);
        assert!(String::from_utf8_lossy(&err).contains("cannot reach"));
    }

    #[test]
    fn token_file_is_private() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested").join("token");
        save_token(&p, "abc").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "abc");
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            assert_eq!(fs::metadata(&p).unwrap().permissions().mode() & 0o777, 0o600);
        }
    }
}
