// SPDX-License-Identifier: Apache-2.0

//! Simulated PLC fleet. Each asset is a Modbus-TCP server with a 16-bit
//! holding-register map and a firmware slot that answers commits with an
//! install proof.
//!
//! Register peek/poke and fault injection exist only with the `test-hooks`
//! feature.

pub mod config;
pub mod sim;

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use ecig_core::modbus::ModbusFrame;
use ecig_core::AssetId;
use thiserror::Error;

pub use config::{FleetConfig, Preload, SimAssetConfig};
pub use sim::{handle_request, SimState, Staging, REGISTER_COUNT};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot bind {endpoint}: {source}")]
    Bind {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("fleet configuration: {0}")]
    Config(String),
    #[error("address {0} outside the register map")]
    OutOfRange(usize),
}

/// Wire-level counters.
#[derive(Debug, Default)]
pub struct Stats {
    frames_received: AtomicU64,
    connections: AtomicU64,
}

impl Stats {
    /// Modbus frames received over the network since start.
    pub fn frames_received(&self) -> u64 {
        self.frames_received.load(Ordering::SeqCst)
    }

    pub fn connections(&self) -> u64 {
        self.connections.load(Ordering::SeqCst)
    }
}

/// One-shot faults applied to the next matching request.
#[cfg(feature = "test-hooks")]
#[derive(Debug, Default, Clone)]
pub struct Faults {
    /// Swallow the acknowledgement of this chunk index.
    pub drop_ack: Option<u16>,
    /// Flip one byte of this chunk index before staging it.
    pub corrupt_chunk: Option<u16>,
    /// Precede the next reply with a copy carrying a stale transaction id.
    pub stale_reply: bool,
}

struct Shared {
    state: Mutex<SimState>,
    stats: Stats,
    stop: AtomicBool,
    live: Mutex<Vec<TcpStream>>,
    #[cfg(feature = "test-hooks")]
    faults: Mutex<Faults>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// A running simulated asset. Stops serving on drop.
pub struct SimAsset {
    asset_id: AssetId,
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl SimAsset {
    pub fn start(cfg: &SimAssetConfig) -> Result<Self, SimError> {
        let listener = TcpListener::bind(&cfg.listen).map_err(|source| SimError::Bind {
            endpoint: cfg.listen.clone(),
            source,
        })?;
        let addr = listener.local_addr().map_err(|source| SimError::Bind {
            endpoint: cfg.listen.clone(),
            source,
        })?;
        listener.set_nonblocking(true).map_err(|source| SimError::Bind {
            endpoint: cfg.listen.clone(),
            source,
        })?;
        let shared = Arc::new(Shared {
            state: Mutex::new(SimState::new(cfg)),
            stats: Stats::default(),
            stop: AtomicBool::new(false),
            live: Mutex::new(Vec::new()),
            #[cfg(feature = "test-hooks")]
            faults: Mutex::new(Faults::default()),
        });
        let accept = {
            let shared = shared.clone();
            thread::Builder::new()
                .name(format!("plcsim-{}", cfg.asset_id))
                .spawn(move || accept_loop(listener, shared))
                .map_err(|source| SimError::Bind {
                    endpoint: cfg.listen.clone(),
                    source,
                })?
        };
        Ok(Self {
            asset_id: cfg.asset_id,
            addr,
            shared,
            accept: Some(accept),
        })
    }

    pub fn asset_id(&self) -> AssetId {
        self.asset_id
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// `host:port` as used in asset policies.
    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn stats(&self) -> &Stats {
        &self.shared.stats
    }

    /// SHA-256 of the last committed image.
    pub fn active_digest(&self) -> Option<[u8; 32]> {
        lock(&self.shared.state).active_digest()
    }

    pub fn commits(&self) -> u64 {
        lock(&self.shared.state).commits()
    }

    /// Stops listening and drops every open connection.
    pub fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        for s in lock(&self.shared.live).drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

#[cfg(feature = "test-hooks")]
impl SimAsset {
    pub fn peek(&self, addr: usize, count: usize) -> Result<Vec<u16>, SimError> {
        let st = lock(&self.shared.state);
        let end = addr.checked_add(count).filter(|e| *e <= REGISTER_COUNT);
        match end {
            Some(end) => Ok(st.registers()[addr..end].to_vec()),
            None => Err(SimError::OutOfRange(addr.max(REGISTER_COUNT))),
        }
    }

    pub fn poke(&self, addr: usize, words: &[u16]) -> Result<(), SimError> {
        let mut st = lock(&self.shared.state);
        match addr.checked_add(words.len()).filter(|e| *e <= REGISTER_COUNT) {
            Some(end) => {
                st.registers_mut()[addr..end].copy_from_slice(words);
                Ok(())
            }
            None => Err(SimError::OutOfRange(addr.max(REGISTER_COUNT))),
        }
    }

    pub fn inject(&self, faults: Faults) {
        *lock(&self.shared.faults) = faults;
    }
}

impl Drop for SimAsset {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                shared.stats.connections.fetch_add(1, Ordering::SeqCst);
                if let Ok(clone) = stream.try_clone() {
                    lock(&shared.live).push(clone);
                }
                let shared = shared.clone();
                let _ = thread::Builder::new()
                    .name("plcsim-conn".into())
                    .spawn(move || serve_connection(stream, shared));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

fn serve_connection(stream: TcpStream, shared: Arc<Shared>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    // Staged chunks live and die with the connection.
    let mut staged = Staging::default();
    // A malformed header leaves no way to resynchronise.
    while let Ok(frame) = ModbusFrame::read_from(&mut reader) {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        shared.stats.frames_received.fetch_add(1, Ordering::SeqCst);
        let Some(replies) = respond(&shared, &mut staged, frame) else {
            continue;
        };
        let mut ok = true;
        for r in replies {
            ok &= writer.write_all(&r.encode()).is_ok();
        }
        if !ok || writer.flush().is_err() {
            break;
        }
    }
}

#[cfg(not(feature = "test-hooks"))]
fn respond(shared: &Shared, staged: &mut Staging, frame: ModbusFrame) -> Option<Vec<ModbusFrame>> {
    let mut st = lock(&shared.state);
    Some(vec![handle_request(&mut st, staged, &frame)])
}

#[cfg(feature = "test-hooks")]
fn respond(shared: &Shared, staged: &mut Staging, mut frame: ModbusFrame) -> Option<Vec<ModbusFrame>> {
    use ecig_core::modbus::FC_FIRMWARE_CHUNK;

    let mut faults = lock(&shared.faults);
    let chunk_index = (frame.function == FC_FIRMWARE_CHUNK && frame.body.len() >= 2)
        .then(|| u16::from_be_bytes([frame.body[0], frame.body[1]]));
    if chunk_index.is_some() && faults.corrupt_chunk == chunk_index {
        faults.corrupt_chunk = None;
        if let Some(b) = frame.body.get_mut(2) {
            *b ^= 0xFF;
        }
    }
    let reply = {
        let mut st = lock(&shared.state);
        handle_request(&mut st, staged, &frame)
    };
    if chunk_index.is_some() && faults.drop_ack == chunk_index {
        faults.drop_ack = None;
        return None;
    }
    let mut out = Vec::new();
    if std::mem::take(&mut faults.stale_reply) {
        let mut stale = reply.clone();
        stale.transaction_id = stale.transaction_id.wrapping_sub(1);
        out.push(stale);
    }
    out.push(reply);
    Some(out)
}

/// Starts every asset in `cfg`.
pub fn start_fleet(cfg: &FleetConfig) -> Result<Vec<SimAsset>, SimError> {
    cfg.assets.iter().map(SimAsset::start).collect()
}
