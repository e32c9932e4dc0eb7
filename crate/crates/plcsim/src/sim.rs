// SPDX-License-Identifier: Apache-2.0

//! Request handling for one simulated asset, independent of sockets.

use std::collections::BTreeMap;

use ecig_core::access::{RegisterRange, SecretKey};
use ecig_core::modbus::{
    ModbusFrame, Request, Response, EXC_ILLEGAL_DATA_ADDRESS, EXC_ILLEGAL_DATA_VALUE, EXC_ILLEGAL_FUNCTION,
    FC_FIRMWARE_CHUNK, FC_FIRMWARE_COMMIT, FC_READ_HOLDING, FC_WRITE_MULTIPLE, MAX_READ_COUNT, MAX_WRITE_COUNT,
};
use hmac::{KeyInit, Mac};
use sha2::{Digest, Sha256};

use crate::config::SimAssetConfig;

pub const REGISTER_COUNT: usize = 1 << 16;

/// Register map, firmware slot and key of one asset.
#[derive(Debug)]
pub struct SimState {
    registers: Vec<u16>,
    illegal: Vec<RegisterRange>,
    device_key: SecretKey,
    active_digest: Option<[u8; 32]>,
    commits: u64,
}

impl SimState {
    pub fn new(cfg: &SimAssetConfig) -> Self {
        let mut registers = vec![0u16; REGISTER_COUNT];
        for p in &cfg.preload {
            for (i, w) in p.words.iter().enumerate() {
                if let Some(slot) = registers.get_mut(usize::from(p.addr) + i) {
                    *slot = *w;
                }
            }
        }
        Self {
            registers,
            illegal: cfg.illegal_ranges.clone(),
            device_key: cfg.device_key,
            active_digest: None,
            commits: 0,
        }
    }

    pub fn active_digest(&self) -> Option<[u8; 32]> {
        self.active_digest
    }

    pub fn commits(&self) -> u64 {
        self.commits
    }

    pub fn registers(&self) -> &[u16] {
        &self.registers
    }

    pub fn registers_mut(&mut self) -> &mut [u16] {
        &mut self.registers
    }

    fn window_is_legal(&self, addr: u16, count: u16) -> bool {
        let start = u32::from(addr);
        let end = start + u32::from(count) - 1;
        end < REGISTER_COUNT as u32 && !self.illegal.iter().any(|r| r.intersects(start, end))
    }

    fn read(&self, addr: u16, count: u16) -> Result<Vec<u16>, u8> {
        if count == 0 || count > MAX_READ_COUNT {
            return Err(EXC_ILLEGAL_DATA_VALUE);
        }
        if !self.window_is_legal(addr, count) {
            return Err(EXC_ILLEGAL_DATA_ADDRESS);
        }
        let a = usize::from(addr);
        Ok(self.registers[a..a + usize::from(count)].to_vec())
    }

    fn write(&mut self, addr: u16, words: &[u16]) -> Result<u16, u8> {
        let count = words.len() as u16;
        if words.is_empty() || count > MAX_WRITE_COUNT {
            return Err(EXC_ILLEGAL_DATA_VALUE);
        }
        if !self.window_is_legal(addr, count) {
            return Err(EXC_ILLEGAL_DATA_ADDRESS);
        }
        let a = usize::from(addr);
        self.registers[a..a + words.len()].copy_from_slice(words);
        Ok(count)
    }

    fn commit(&mut self, staged: &mut Staging) -> Result<[u8; 32], u8> {
        let image = staged.assemble().ok_or(EXC_ILLEGAL_DATA_VALUE)?;
        let digest: [u8; 32] = Sha256::digest(&image).into();
        let mut mac = hmac::Hmac::<Sha256>::new_from_slice(self.device_key.as_bytes()).expect("any key length");
        mac.update(&digest);
        self.active_digest = Some(digest);
        self.commits += 1;
        staged.chunks.clear();
        Ok(mac.finalize().into_bytes().into())
    }
}

/// Firmware chunks received on one connection, not yet committed.
#[derive(Debug, Default)]
pub struct Staging {
    chunks: BTreeMap<u16, Vec<u8>>,
}

impl Staging {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Concatenation of chunks `0..n` in order; `None` if any index is
    /// missing or nothing is staged.
    fn assemble(&self) -> Option<Vec<u8>> {
        if self.chunks.is_empty() {
            return None;
        }
        let mut out = Vec::new();
        for (expected, (index, payload)) in self.chunks.iter().enumerate() {
            if usize::from(*index) != expected {
                return None;
            }
            out.extend_from_slice(payload);
        }
        Some(out)
    }
}

/// Applies one request frame. The reply echoes the transaction and unit ids.
pub fn handle_request(state: &mut SimState, staged: &mut Staging, frame: &ModbusFrame) -> ModbusFrame {
    let fc = frame.function;
    let response = match fc {
        FC_READ_HOLDING | FC_WRITE_MULTIPLE | FC_FIRMWARE_CHUNK | FC_FIRMWARE_COMMIT => {
            match Request::decode(fc, &frame.body) {
                Err(_) => Response::Exception {
                    function: fc,
                    code: EXC_ILLEGAL_DATA_VALUE,
                },
                Ok(req) => apply(state, staged, req).unwrap_or_else(|code| Response::Exception { function: fc, code }),
            }
        }
        _ => Response::Exception {
            function: fc & 0x7F,
            code: EXC_ILLEGAL_FUNCTION,
        },
    };
    response.to_frame(frame.transaction_id, frame.unit_id)
}

fn apply(state: &mut SimState, staged: &mut Staging, req: Request) -> Result<Response, u8> {
    match req {
        Request::ReadHolding { addr, count } => state.read(addr, count).map(Response::ReadHolding),
        Request::WriteMultiple { addr, words } => state
            .write(addr, &words)
            .map(|count| Response::WriteMultiple { addr, count }),
        Request::FirmwareChunk { index, payload } => {
            staged.chunks.insert(index, payload);
            Ok(Response::FirmwareChunkAck { index })
        }
        Request::FirmwareCommit => state.commit(staged).map(|proof| Response::FirmwareCommit { proof }),
    }
}
