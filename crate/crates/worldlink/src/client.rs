// SPDX-License-Identifier: Apache-2.0

//! Normal-world client API.

use std::collections::HashSet;
use std::fmt;
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::WorldError;
use crate::frame;
use crate::message::{Reply, Request, WireParam};
use crate::param::{Parameter, WorldCommand, MAX_PARAMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextState {
    Open,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Open,
    Closed,
}

struct Bookkeeping {
    state: ContextState,
    open_sessions: HashSet<u64>,
}

struct ContextInner {
    id: u64,
    endpoint: PathBuf,
    link: Mutex<UnixStream>,
    book: Mutex<Bookkeeping>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl ContextInner {
    fn call(&self, req: &Request) -> Result<Reply, WorldError> {
        let mut link = lock(&self.link);
        frame::write_message(&mut *link, req)?;
        frame::read_message(&mut *link)?
            .ok_or_else(|| WorldError::Protocol("secure world closed the channel".into()))
    }
}

/// Logical connection to the secure world. Cheap to clone and shareable
/// across threads.
#[derive(Clone)]
pub struct WorldContext {
    inner: Arc<ContextInner>,
}

impl fmt::Debug for WorldContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorldContext")
            .field("id", &self.inner.id)
            .field("endpoint", &self.inner.endpoint)
            .field("state", &self.state())
            .finish()
    }
}

impl WorldContext {
    /// Connects to the secure-world process listening at `endpoint`.
    pub fn initialize(endpoint: impl AsRef<Path>) -> Result<Self, WorldError> {
        let endpoint = endpoint.as_ref().to_path_buf();
        let stream = UnixStream::connect(&endpoint).map_err(WorldError::EndpointUnreachable)?;
        Ok(Self {
            inner: Arc::new(ContextInner {
                id: rand::random(),
                endpoint,
                link: Mutex::new(stream),
                book: Mutex::new(Bookkeeping {
                    state: ContextState::Open,
                    open_sessions: HashSet::new(),
                }),
            }),
        })
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn state(&self) -> ContextState {
        lock(&self.inner.book).state
    }

    /// Opens a session to `ta_id`, asking the secure world to measure
    /// `image_path` (the caller's own image).
    pub fn open_session(&self, ta_id: &str, image_path: impl AsRef<Path>) -> Result<WorldSession, WorldError> {
        if self.state() == ContextState::Finalized {
            return Err(WorldError::ContextFinalized);
        }
        let reply = self.inner.call(&Request::OpenSession {
            context_id: self.inner.id,
            ta_id: ta_id.to_owned(),
            image_path: image_path.as_ref().to_string_lossy().into_owned(),
        })?;
        match reply {
            Reply::SessionOpened { session_id, attested } => {
                lock(&self.inner.book).open_sessions.insert(session_id);
                Ok(WorldSession {
                    id: session_id,
                    ta_id: ta_id.to_owned(),
                    attested,
                    ctx: self.inner.clone(),
                    lane: Mutex::new(SessionState::Open),
                })
            }
            Reply::Error(e) => Err(e.into()),
            other => Err(unexpected(&other)),
        }
    }

    /// Finalizes the context. Every session must be closed first.
    pub fn finalize(&self) -> Result<(), WorldError> {
        let mut book = lock(&self.inner.book);
        if book.state == ContextState::Finalized {
            return Ok(());
        }
        if !book.open_sessions.is_empty() {
            return Err(WorldError::SessionsStillOpen(book.open_sessions.len()));
        }
        match self.inner.call(&Request::FinalizeContext {
            context_id: self.inner.id,
        })? {
            Reply::ContextFinalized { .. } => {
                book.state = ContextState::Finalized;
                Ok(())
            }
            Reply::Error(e) => Err(e.into()),
            other => Err(unexpected(&other)),
        }
    }

    /// Sends a request verbatim. Lets tests exercise the secure world's own
    /// checks, bypassing the client-side ones.
    pub fn send_raw(&self, req: &Request) -> Result<Reply, WorldError> {
        self.inner.call(req)
    }
}

/// A session to one trusted application. Invocations on one session are
/// serialized; other threads block until the current one returns.
pub struct WorldSession {
    id: u64,
    ta_id: String,
    attested: bool,
    ctx: Arc<ContextInner>,
    lane: Mutex<SessionState>,
}

impl fmt::Debug for WorldSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorldSession")
            .field("id", &self.id)
            .field("ta_id", &self.ta_id)
            .field("attested", &self.attested)
            .finish()
    }
}

impl WorldSession {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn context_id(&self) -> u64 {
        self.ctx.id
    }

    pub fn ta_id(&self) -> &str {
        &self.ta_id
    }

    pub fn is_attested(&self) -> bool {
        self.attested
    }

    pub fn state(&self) -> SessionState {
        *lock(&self.lane)
    }

    /// Runs `cmd` in the trusted application. On success the writable
    /// parameters of `cmd` hold the results, which are also returned in order.
    pub fn invoke(&self, cmd: &mut WorldCommand) -> Result<Vec<Vec<u8>>, WorldError> {
        let lane = lock(&self.lane);
        if *lane == SessionState::Closed {
            return Err(WorldError::SessionClosed);
        }
        let reply = self.ctx.call(&Request::InvokeCommand {
            session_id: self.id,
            command_id: cmd.command_id(),
            params: cmd.params().iter().map(WireParam::from).collect(),
        })?;
        match reply {
            Reply::CommandDone { params } => {
                if params.len() != cmd.params().len() || params.len() > MAX_PARAMS {
                    return Err(WorldError::Protocol(format!(
                        "sent {} parameters, got {} back",
                        cmd.params().len(),
                        params.len()
                    )));
                }
                cmd.apply_results(params.into_iter().map(Parameter::from).collect());
                Ok(cmd.outputs())
            }
            Reply::Error(e) => Err(e.into()),
            other => Err(unexpected(&other)),
        }
    }

    /// Closes the session. A second call is a no-op.
    pub fn close(&self) -> Result<(), WorldError> {
        let mut lane = lock(&self.lane);
        if *lane == SessionState::Closed {
            return Ok(());
        }
        *lane = SessionState::Closed;
        lock(&self.ctx.book).open_sessions.remove(&self.id);
        match self.ctx.call(&Request::CloseSession { session_id: self.id })? {
            Reply::SessionClosed { .. } | Reply::Error(_) => Ok(()),
            other => Err(unexpected(&other)),
        }
    }
}

impl Drop for WorldSession {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

fn unexpected(reply: &Reply) -> WorldError {
    WorldError::Protocol(format!("unexpected reply {reply:?}"))
}
