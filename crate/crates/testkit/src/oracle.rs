// SPDX-License-Identifier: Apache-2.0

//! Reference computations written independently of the production code.

use sha2::{Digest, Sha256};

/// HMAC-SHA256 assembled from the raw hash with explicit pads.
pub fn hmac_sha256(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut k = [0u8; 64];
    if key.len() > 64 {
        k[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let pad = |b: u8| k.iter().map(|x| x ^ b).collect::<Vec<u8>>();
    let inner = Sha256::new().chain_update(pad(0x36)).chain_update(msg).finalize();
    Sha256::new().chain_update(pad(0x5c)).chain_update(inner).finalize().into()
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Whether any address of `[addr, addr + len)` falls in a listed block.
pub fn overlaps(blocks: &[(u16, u16)], addr: u32, len: u32) -> bool {
    (addr..addr + len).any(|a| blocks.iter().any(|&(lo, hi)| a >= u32::from(lo) && a <= u32::from(hi)))
}
