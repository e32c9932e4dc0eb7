// SPDX-License-Identifier: Apache-2.0

//! Network client (NC): a Modbus-TCP client for holding registers plus the
//! firmware-transfer extension.
//!
//! A connection carries one transaction at a time; every operation borrows
//! it mutably, so pipelining is impossible through this API.

use std::io::{self, BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::time::Duration;

use ecig_core::modbus::{ModbusFrame, Request, Response, MAX_CHUNK_LEN, MAX_READ_COUNT, MAX_WRITE_COUNT};
use ecig_core::AssetId;
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum NetError {
    #[error("connection refused by {0}")]
    ConnectRefused(String),
    #[error("timed out")]
    Timeout,
    #[error("cannot resolve {0}")]
    BadEndpoint(String),
    #[error("exception {code:#04x} for function {function:#04x}")]
    ExceptionResponse { function: u8, code: u8 },
    #[error("register count {0} exceeds the protocol bound")]
    CountTooLarge(usize),
    #[error("empty request")]
    EmptyRequest,
    #[error("connection is closed")]
    Disconnected,
    #[error("firmware transfer failed: {0}")]
    TransferError(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(io::Error),
}

fn classify(e: io::Error) -> NetError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => NetError::Timeout,
        _ => NetError::Io(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnState {
    Connected,
    Disconnected,
}

struct Link {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

pub struct AssetConnection {
    asset_id: AssetId,
    endpoint: String,
    unit_id: u8,
    link: Option<Link>,
    next_txn: u16,
    discarded: u64,
}

impl std::fmt::Debug for AssetConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AssetConnection")
            .field("asset_id", &self.asset_id)
            .field("endpoint", &self.endpoint)
            .field("state", &self.state())
            .field("next_txn", &self.next_txn)
            .finish()
    }
}

impl AssetConnection {
    pub fn connect(asset_id: AssetId, endpoint: &str, unit_id: u8, timeout: Duration) -> Result<Self, NetError> {
        let addr = endpoint
            .to_socket_addrs()
            .map_err(|_| NetError::BadEndpoint(endpoint.into()))?
            .next()
            .ok_or_else(|| NetError::BadEndpoint(endpoint.into()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| match e.kind() {
            io::ErrorKind::ConnectionRefused => NetError::ConnectRefused(endpoint.into()),
            _ => classify(e),
        })?;
        stream.set_read_timeout(Some(timeout)).map_err(NetError::Io)?;
        stream.set_write_timeout(Some(timeout)).map_err(NetError::Io)?;
        let _ = stream.set_nodelay(true);
        let writer = stream.try_clone().map_err(NetError::Io)?;
        Ok(Self {
            asset_id,
            endpoint: endpoint.into(),
            unit_id,
            link: Some(Link {
                reader: BufReader::new(stream),
                writer,
            }),
            next_txn: 1,
            discarded: 0,
        })
    }

    pub fn asset_id(&self) -> AssetId {
        self.asset_id
    }

    pub fn state(&self) -> ConnState {
        if self.link.is_some() {
            ConnState::Connected
        } else {
            ConnState::Disconnected
        }
    }

    /// Transaction id the next request will carry.
    pub fn next_transaction_id(&self) -> u16 {
        self.next_txn
    }

    /// Responses dropped because their transaction id did not match.
    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    fn transact(&mut self, req: &Request) -> Result<Response, NetError> {
        let link = self.link.as_mut().ok_or(NetError::Disconnected)?;
        let txn = self.next_txn;
        self.next_txn = self.next_txn.wrapping_add(1);
        let frame = req.to_frame(txn, self.unit_id);
        let outcome = (|| {
            link.writer.write_all(&frame.encode()).map_err(classify)?;
            loop {
                let reply = ModbusFrame::read_from(&mut link.reader).map_err(classify)?;
                if reply.transaction_id != txn {
                    self.discarded += 1;
                    continue;
                }
                return Response::decode(reply.function, &reply.body).map_err(|e| NetError::Protocol(e.to_string()));
            }
        })();
        if let Err(NetError::Timeout | NetError::Io(_) | NetError::Protocol(_)) = &outcome {
            // The stream may hold a late reply; it cannot be reused safely.
            self.disconnect();
        }
        match outcome? {
            Response::Exception { function, code } => Err(NetError::ExceptionResponse { function, code }),
            r if r.function() != req.function() => Err(NetError::Protocol(format!(
                "function {:#04x} answered with {:#04x}",
                req.function(),
                r.function()
            ))),
            r => Ok(r),
        }
    }

    pub fn read_registers(&mut self, addr: u16, count: usize) -> Result<Vec<u16>, NetError> {
        if count == 0 {
            return Err(NetError::EmptyRequest);
        }
        if count > usize::from(MAX_READ_COUNT) {
            return Err(NetError::CountTooLarge(count));
        }
        match self.transact(&Request::ReadHolding {
            addr,
            count: count as u16,
        })? {
            Response::ReadHolding(words) if words.len() == count => Ok(words),
            Response::ReadHolding(words) => Err(NetError::Protocol(format!(
                "asked for {count} registers, got {}",
                words.len()
            ))),
            other => Err(NetError::Protocol(format!("{other:?}"))),
        }
    }

    pub fn write_registers(&mut self, addr: u16, words: &[u16]) -> Result<(), NetError> {
        if words.is_empty() {
            return Err(NetError::EmptyRequest);
        }
        if words.len() > usize::from(MAX_WRITE_COUNT) {
            return Err(NetError::CountTooLarge(words.len()));
        }
        match self.transact(&Request::WriteMultiple {
            addr,
            words: words.to_vec(),
        })? {
            Response::WriteMultiple { addr: a, count } if a == addr && usize::from(count) == words.len() => Ok(()),
            other => Err(NetError::Protocol(format!("bad write echo {other:?}"))),
        }
    }

    /// Reads any number of registers, split into protocol-sized requests.
    pub fn read_span(&mut self, addr: u16, count: usize) -> Result<Vec<u16>, NetError> {
        let mut out = Vec::with_capacity(count);
        let mut at = u32::from(addr);
        while out.len() < count {
            let n = (count - out.len()).min(usize::from(MAX_READ_COUNT));
            let a = u16::try_from(at).map_err(|_| NetError::CountTooLarge(count))?;
            out.extend(self.read_registers(a, n)?);
            at += n as u32;
        }
        Ok(out)
    }

    /// Writes any number of registers, split into protocol-sized requests.
    pub fn write_span(&mut self, addr: u16, words: &[u16]) -> Result<(), NetError> {
        if words.is_empty() {
            return Err(NetError::EmptyRequest);
        }
        let mut at = u32::from(addr);
        for chunk in words.chunks(usize::from(MAX_WRITE_COUNT)) {
            let a = u16::try_from(at).map_err(|_| NetError::CountTooLarge(words.len()))?;
            self.write_registers(a, chunk)?;
            at += chunk.len() as u32;
        }
        Ok(())
    }

    /// Sends `image` in order as 1024-byte chunks, commits it and returns
    /// the asset's install proof.
    pub fn transfer_firmware(&mut self, image: &[u8]) -> Result<[u8; 32], NetError> {
        if image.is_empty() {
            return Err(NetError::EmptyRequest);
        }
        let chunks = image.chunks(MAX_CHUNK_LEN);
        if chunks.len() > usize::from(u16::MAX) + 1 {
            return Err(NetError::TransferError("image too large".into()));
        }
        for (i, chunk) in chunks.enumerate() {
            let index = i as u16;
            let ack = self
                .transact(&Request::FirmwareChunk {
                    index,
                    payload: chunk.to_vec(),
                })
                .map_err(|e| NetError::TransferError(format!("chunk {index} not acknowledged: {e}")))?;
            if ack != (Response::FirmwareChunkAck { index }) {
                return Err(NetError::TransferError(format!("chunk {index}: unexpected ack {ack:?}")));
            }
        }
        match self
            .transact(&Request::FirmwareCommit)
            .map_err(|e| NetError::TransferError(format!("commit failed: {e}")))?
        {
            Response::FirmwareCommit { proof } => Ok(proof),
            other => Err(NetError::TransferError(format!("unexpected commit reply {other:?}"))),
        }
    }

    /// Closes the connection. Safe to call repeatedly.
    pub fn disconnect(&mut self) {
        if let Some(link) = self.link.take() {
            let _ = link.writer.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for AssetConnection {
    fn drop(&mut self) {
        self.disconnect();
    }
}
