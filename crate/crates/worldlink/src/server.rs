// SPDX-License-Identifier: Apache-2.0

//! Secure-world runtime: session bookkeeping, attestation and dispatch to
//! installed trusted applications.
//!
//! All requests, from every connection, pass through one lock, so the secure
//! world executes a single command at a time.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, BufReader, BufWriter};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use ecig_core::audit::{AuditEntry, AuditLog, Outcome};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame;
use crate::measure::{measure_image, HashAlgorithm, Measurement, MeasurementMode};
use crate::message::{Reply, Request, WireError, WireParam};
use crate::param::{ParamDirection, Parameter, MAX_PARAMS};

const SW_PRINCIPAL: &str = "normal_world";

/// What a trusted application learns about the session it serves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionInfo {
    pub session_id: u64,
    pub context_id: u64,
    pub ta_id: String,
    pub attested: bool,
}

/// Entry points of a trusted application. Errors are handler return codes.
pub trait TrustedApplication: Send {
    fn ta_id(&self) -> &str;

    fn create(&mut self) -> Result<(), u32> {
        Ok(())
    }

    fn open_session(&mut self, _session: &SessionInfo) -> Result<(), u32> {
        Ok(())
    }

    fn invoke(&mut self, session: &SessionInfo, command_id: u32, params: &mut [Parameter]) -> Result<(), u32>;

    fn close_session(&mut self, _session: &SessionInfo) {}

    fn destroy(&mut self) {}
}

#[derive(Debug, Error)]
pub enum AttestError {
    #[error("training is disabled in normal mode")]
    TrainingDisabled,
    #[error("no reference digest recorded for `{0}`")]
    NoTrainedHash(String),
    #[error("digest mismatch: expected {expected}, measured {found}")]
    Mismatch { expected: String, found: String },
    #[error("image unreadable: {0}")]
    Unreadable(#[source] io::Error),
    #[error("reference store: {0}")]
    Store(#[source] io::Error),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ReferenceFile {
    algorithm: HashAlgorithm,
    references: BTreeMap<String, String>,
}

/// Reference digests (`hash_correct`) per trusted application, persisted in
/// secure storage.
#[derive(Debug)]
pub struct Attestor {
    mode: MeasurementMode,
    store: PathBuf,
    refs: ReferenceFile,
}

impl Attestor {
    pub fn open(store: impl Into<PathBuf>, mode: MeasurementMode, algorithm: HashAlgorithm) -> Result<Self, AttestError> {
        let store = store.into();
        let mut refs = match fs::read(&store) {
            Ok(bytes) => serde_json::from_slice::<ReferenceFile>(&bytes)
                .map_err(|e| AttestError::Store(io::Error::new(io::ErrorKind::InvalidData, e)))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => ReferenceFile {
                algorithm,
                references: BTreeMap::new(),
            },
            Err(e) => return Err(AttestError::Store(e)),
        };
        if refs.algorithm != algorithm {
            // References taken with another digest are useless; retraining is required.
            refs = ReferenceFile {
                algorithm,
                references: BTreeMap::new(),
            };
        }
        Ok(Self { mode, store, refs })
    }

    pub fn mode(&self) -> MeasurementMode {
        self.mode
    }

    pub fn algorithm(&self) -> HashAlgorithm {
        self.refs.algorithm
    }

    pub fn set_mode(&mut self, mode: MeasurementMode) {
        self.mode = mode;
    }

    /// The recorded reference digest for `ta_id`.
    pub fn reference(&self, ta_id: &str) -> Option<Vec<u8>> {
        self.refs.references.get(ta_id).and_then(|h| hex::decode(h).ok())
    }

    /// Measures `image` and records it as the reference for `ta_id`,
    /// replacing any earlier one.
    pub fn train(&mut self, ta_id: &str, image: &Path) -> Result<Measurement, AttestError> {
        if self.mode != MeasurementMode::Training {
            return Err(AttestError::TrainingDisabled);
        }
        let m = measure_image(image, self.algorithm()).map_err(AttestError::Unreadable)?;
        self.refs.references.insert(ta_id.to_owned(), m.hex());
        self.persist()?;
        Ok(m)
    }

    /// Measures `image` and compares it with the reference for `ta_id`.
    pub fn verify(&self, ta_id: &str, image: &Path) -> Result<Measurement, AttestError> {
        let expected = self
            .refs
            .references
            .get(ta_id)
            .ok_or_else(|| AttestError::NoTrainedHash(ta_id.to_owned()))?;
        let m = measure_image(image, self.algorithm()).map_err(AttestError::Unreadable)?;
        if &m.hex() != expected {
            return Err(AttestError::Mismatch {
                expected: expected.clone(),
                found: m.hex(),
            });
        }
        Ok(m)
    }

    fn persist(&self) -> Result<(), AttestError> {
        let bytes = serde_json::to_vec_pretty(&self.refs).expect("reference file serializes");
        if let Some(dir) = self.store.parent() {
            fs::create_dir_all(dir).map_err(AttestError::Store)?;
        }
        let tmp = self.store.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(AttestError::Store)?;
        fs::rename(&tmp, &self.store).map_err(AttestError::Store)
    }
}

struct ContextRecord {
    finalized: bool,
    open_sessions: HashSet<u64>,
}

struct SessionRecord {
    info: SessionInfo,
    open: bool,
}

struct State {
    attestor: Attestor,
    apps: BTreeMap<String, Box<dyn TrustedApplication>>,
    contexts: HashMap<u64, ContextRecord>,
    sessions: HashMap<u64, SessionRecord>,
    audit: Arc<AuditLog>,
}

impl State {
    fn audit(&self, activity: &str, outcome: Outcome, detail: String) {
        if let Err(e) = self
            .audit
            .append(AuditEntry::new(SW_PRINCIPAL, activity).outcome(outcome).detail(detail))
        {
            eprintln!("secure world: audit append failed: {e}");
        }
    }
}

/// Contexts created over one connection.
#[derive(Debug, Default)]
pub struct Connection {
    contexts: HashSet<u64>,
}

pub struct SecureWorld {
    state: Mutex<State>,
}

impl SecureWorld {
    pub fn new(attestor: Attestor, audit: Arc<AuditLog>) -> Self {
        Self {
            state: Mutex::new(State {
                attestor,
                apps: BTreeMap::new(),
                contexts: HashMap::new(),
                sessions: HashMap::new(),
                audit,
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Installs a trusted application and runs its create entry point.
    pub fn install(&self, mut ta: Box<dyn TrustedApplication>) -> Result<(), u32> {
        ta.create()?;
        let mut st = self.lock();
        let id = ta.ta_id().to_owned();
        st.audit("ws.create", Outcome::Ok, format!("ta={id}"));
        st.apps.insert(id, ta);
        Ok(())
    }

    /// Direct access to the attestor, e.g. for offline training.
    pub fn with_attestor<R>(&self, f: impl FnOnce(&mut Attestor) -> R) -> R {
        f(&mut self.lock().attestor)
    }

    pub fn handle(&self, req: Request, conn: &mut Connection) -> Reply {
        let mut st = self.lock();
        match req {
            Request::OpenSession {
                context_id,
                ta_id,
                image_path,
            } => open_session(&mut st, conn, context_id, &ta_id, Path::new(&image_path)),
            Request::InvokeCommand {
                session_id,
                command_id,
                params,
            } => invoke(&mut st, conn, session_id, command_id, params),
            Request::CloseSession { session_id } => {
                close_session(&mut st, conn, session_id);
                Reply::SessionClosed { session_id }
            }
            Request::FinalizeContext { context_id } => finalize(&mut st, conn, context_id),
        }
    }

    /// Tears down everything a dropped connection left behind.
    pub fn disconnect(&self, conn: Connection) {
        let mut st = self.lock();
        for ctx in conn.contexts {
            if let Some(rec) = st.contexts.remove(&ctx) {
                for sid in rec.open_sessions {
                    end_session(&mut st, sid);
                }
            }
        }
    }

    /// Binds `path` and serves connections on background threads.
    pub fn listen(self: Arc<Self>, path: impl AsRef<Path>) -> io::Result<SecureWorldServer> {
        let path = path.as_ref().to_path_buf();
        if path.exists() {
            fs::remove_file(&path)?;
        }
        let listener = UnixListener::bind(&path)?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let stop = stop.clone();
            thread::Builder::new()
                .name("sw-accept".into())
                .spawn(move || accept_loop(self, listener, stop))?
        };
        Ok(SecureWorldServer {
            path,
            stop,
            thread: Some(thread),
        })
    }

    /// Serves on the calling thread until the listener fails.
    pub fn serve(self: Arc<Self>, path: impl AsRef<Path>) -> io::Result<()> {
        let mut server = self.listen(path)?;
        match server.thread.take() {
            Some(t) => t.join().map_err(|_| io::Error::other("accept loop panicked")),
            None => Ok(()),
        }
    }
}

impl Drop for SecureWorld {
    fn drop(&mut self) {
        let st = self.state.get_mut().unwrap_or_else(|e| e.into_inner());
        for ta in st.apps.values_mut() {
            ta.destroy();
        }
    }
}

fn open_session(st: &mut State, conn: &mut Connection, context_id: u64, ta_id: &str, image: &Path) -> Reply {
    if let Some(ctx) = st.contexts.get(&context_id) {
        if ctx.finalized {
            return Reply::Error(WireError::ContextFinalized);
        }
        if !conn.contexts.contains(&context_id) {
            return Reply::Error(WireError::BadRequest {
                detail: "context belongs to another connection".into(),
            });
        }
    }
    if !st.apps.contains_key(ta_id) {
        return Reply::Error(WireError::UnknownTa { ta_id: ta_id.into() });
    }

    let session_id = loop {
        let id: u64 = rand::random();
        if id != 0 && !st.sessions.contains_key(&id) {
            break id;
        }
    };

    let attestation = match st.attestor.mode() {
        MeasurementMode::Training => st.attestor.train(ta_id, image).map(|m| (m, false)),
        MeasurementMode::Normal => st.attestor.verify(ta_id, image).map(|m| (m, true)),
    };
    let attested = match attestation {
        Ok((m, attested)) => {
            let what = if attested { "verified" } else { "trained" };
            st.audit(
                "ws.attest",
                Outcome::Ok,
                format!("ta={ta_id} session={session_id} {what} digest={}", m.hex()),
            );
            attested
        }
        Err(AttestError::Mismatch { expected, found }) => {
            st.sessions.insert(
                session_id,
                SessionRecord {
                    info: SessionInfo {
                        session_id,
                        context_id,
                        ta_id: ta_id.into(),
                        attested: false,
                    },
                    open: false,
                },
            );
            st.audit(
                "ws.attest",
                Outcome::Denied,
                format!(
                    "ta={ta_id} session={session_id} reason=attestation_mismatch expected={expected} found={found}; session closed"
                ),
            );
            return Reply::Error(WireError::AttestationMismatch { session_id });
        }
        Err(AttestError::NoTrainedHash(_)) => {
            st.audit("ws.attest", Outcome::Denied, format!("ta={ta_id} reason=no_trained_hash"));
            return Reply::Error(WireError::NoTrainedHash);
        }
        Err(e) => {
            st.audit("ws.attest", Outcome::Failed, format!("ta={ta_id} reason=unreadable {e}"));
            return Reply::Error(WireError::ImageUnreadable { detail: e.to_string() });
        }
    };

    let info = SessionInfo {
        session_id,
        context_id,
        ta_id: ta_id.into(),
        attested,
    };
    if let Err(code) = st.apps.get_mut(ta_id).expect("checked above").open_session(&info) {
        st.audit(
            "ws.open_session",
            Outcome::Failed,
            format!("ta={ta_id} code={code:#010x}"),
        );
        return Reply::Error(WireError::HandlerError { code });
    }
    conn.contexts.insert(context_id);
    st.contexts
        .entry(context_id)
        .or_insert_with(|| ContextRecord {
            finalized: false,
            open_sessions: HashSet::new(),
        })
        .open_sessions
        .insert(session_id);
    st.sessions.insert(session_id, SessionRecord { info, open: true });
    st.audit(
        "ws.open_session",
        Outcome::Ok,
        format!("ta={ta_id} context={context_id} session={session_id} attested={attested}"),
    );
    Reply::SessionOpened { session_id, attested }
}

fn invoke(st: &mut State, conn: &Connection, session_id: u64, command_id: u32, params: Vec<WireParam>) -> Reply {
    let info = match st.sessions.get(&session_id) {
        Some(s) if s.open && conn.contexts.contains(&s.info.context_id) => s.info.clone(),
        _ => {
            st.audit(
                "ws.invoke",
                Outcome::Denied,
                format!("session={session_id} command={command_id} reason=session_closed"),
            );
            return Reply::Error(WireError::SessionClosed);
        }
    };
    if params.len() > MAX_PARAMS {
        st.audit(
            "ws.invoke",
            Outcome::Denied,
            format!("session={session_id} command={command_id} reason=too_many_parameters"),
        );
        return Reply::Error(WireError::TooManyParameters { count: params.len() });
    }
    if st.attestor.mode() == MeasurementMode::Normal && !info.attested {
        st.audit(
            "ws.invoke",
            Outcome::Denied,
            format!("session={session_id} command={command_id} reason=not_attested"),
        );
        return Reply::Error(WireError::HandlerError {
            code: ecig_core::smproto::code::ACCESS_DENIED,
        });
    }

    let originals: Vec<Parameter> = params.into_iter().map(Parameter::from).collect();
    let mut working = originals.clone();
    let ta = st.apps.get_mut(&info.ta_id).expect("session references an installed TA");
    let result = ta.invoke(&info, command_id, &mut working);
    match result {
        Ok(()) => {
            // Successful invocations are left to the application to record,
            // so its own appends stay consecutive.
            let out = originals
                .iter()
                .zip(working)
                .map(|(orig, new)| match orig.direction {
                    ParamDirection::In => WireParam::from(orig),
                    _ => WireParam {
                        direction: orig.direction,
                        payload: new.payload,
                    },
                })
                .collect();
            Reply::CommandDone { params: out }
        }
        Err(code) => {
            st.audit(
                "ws.invoke",
                Outcome::Failed,
                format!(
                    "ta={} session={session_id} command={command_id} code={code:#010x}",
                    info.ta_id
                ),
            );
            Reply::Error(WireError::HandlerError { code })
        }
    }
}

fn end_session(st: &mut State, session_id: u64) -> bool {
    let info = match st.sessions.get_mut(&session_id) {
        Some(s) if s.open => {
            s.open = false;
            s.info.clone()
        }
        _ => return false,
    };
    if let Some(ctx) = st.contexts.get_mut(&info.context_id) {
        ctx.open_sessions.remove(&session_id);
    }
    if let Some(ta) = st.apps.get_mut(&info.ta_id) {
        ta.close_session(&info);
    }
    st.audit(
        "ws.close_session",
        Outcome::Ok,
        format!("ta={} session={session_id}", info.ta_id),
    );
    true
}

fn close_session(st: &mut State, conn: &Connection, session_id: u64) {
    let owned = st
        .sessions
        .get(&session_id)
        .is_some_and(|s| conn.contexts.contains(&s.info.context_id));
    if owned {
        end_session(st, session_id);
    }
}

fn finalize(st: &mut State, conn: &mut Connection, context_id: u64) -> Reply {
    match st.contexts.get_mut(&context_id) {
        Some(ctx) if !conn.contexts.contains(&context_id) => {
            let _ = ctx;
            Reply::Error(WireError::BadRequest {
                detail: "context belongs to another connection".into(),
            })
        }
        Some(ctx) if !ctx.open_sessions.is_empty() => Reply::Error(WireError::SessionsStillOpen {
            open: ctx.open_sessions.len(),
        }),
        Some(ctx) => {
            ctx.finalized = true;
            st.audit("ws.finalize_context", Outcome::Ok, format!("context={context_id}"));
            Reply::ContextFinalized { context_id }
        }
        None => {
            conn.contexts.insert(context_id);
            st.contexts.insert(
                context_id,
                ContextRecord {
                    finalized: true,
                    open_sessions: HashSet::new(),
                },
            );
            st.audit("ws.finalize_context", Outcome::Ok, format!("context={context_id}"));
            Reply::ContextFinalized { context_id }
        }
    }
}

fn accept_loop(world: Arc<SecureWorld>, listener: UnixListener, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, _)) => {
                let world = world.clone();
                let _ = thread::Builder::new()
                    .name("sw-conn".into())
                    .spawn(move || serve_connection(world, stream));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                eprintln!("secure world: accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn serve_connection(world: Arc<SecureWorld>, stream: UnixStream) {
    let _ = stream.set_nonblocking(false);
    let mut conn = Connection::default();
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    loop {
        let req: Request = match frame::read_message(&mut reader) {
            Ok(Some(req)) => req,
            Ok(None) => break,
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                let reply = Reply::Error(WireError::BadRequest { detail: e.to_string() });
                if frame::write_message(&mut writer, &reply).is_err() {
                    break;
                }
                continue;
            }
            Err(_) => break,
        };
        let reply = world.handle(req, &mut conn);
        if frame::write_message(&mut writer, &reply).is_err() {
            break;
        }
    }
    world.disconnect(conn);
}

/// Handle to a listening secure world; stops accepting on drop.
pub struct SecureWorldServer {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl SecureWorldServer {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        let _ = fs::remove_file(&self.path);
    }
}

impl Drop for SecureWorldServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
