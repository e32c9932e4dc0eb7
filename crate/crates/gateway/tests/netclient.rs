// SPDX-License-Identifier: Apache-2.0

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use ecig_core::access::{RegisterRange, SecretKey};
use ecig_gateway::netclient::{AssetConnection, ConnState, NetError};
use ecig_plcsim::{Faults, Preload, SimAsset, SimAssetConfig};
use sha2::{Digest, Sha256};

const KEY: [u8; 32] = [0x42; 32];
const T: Duration = Duration::from_millis(500);

fn asset() -> SimAsset {
    let mut cfg = SimAssetConfig::new(1, "127.0.0.1:0", SecretKey::from_bytes(KEY));
    cfg.preload.push(Preload {
        addr: 0x20,
        words: vec![0xBEEF],
    });
    cfg.illegal_ranges.push(RegisterRange::new(0xF000, 0xFFFF).unwrap());
    SimAsset::start(&cfg).unwrap()
}

fn connect(a: &SimAsset) -> AssetConnection {
    AssetConnection::connect(a.asset_id(), &a.endpoint(), 1, T).unwrap()
}

fn hmac_oracle(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut k = [0u8; 64];
    k[..key.len()].copy_from_slice(key);
    let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
    let inner = Sha256::new().chain_update(&ipad).chain_update(msg).finalize();
    Sha256::new().chain_update(&opad).chain_update(inner).finalize().into()
}

/// A one-shot server that records the first request and answers with
/// `reply` (or nothing).
fn capture_server(reply: Option<Vec<u8>>) -> (String, mpsc::Receiver<Vec<u8>>) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (mut s, _) = l.accept().unwrap();
        let mut head = [0u8; 7];
        s.read_exact(&mut head).unwrap();
        let len = u16::from_be_bytes([head[4], head[5]]) as usize;
        let mut rest = vec![0u8; len - 1];
        s.read_exact(&mut rest).unwrap();
        let mut all = head.to_vec();
        all.extend(rest);
        tx.send(all).unwrap();
        match reply {
            Some(r) => s.write_all(&r).unwrap(),
            None => thread::sleep(Duration::from_secs(2)),
        }
    });
    (addr, rx)
}

#[test]
fn canonical_read_leaves_the_client_byte_exact() {
    let (addr, rx) = capture_server(Some(vec![
        0x00, 0x01, 0x00, 0x00, 0x00, 0x07, 0x01, 0x03, 0x04, 0x12, 0x34, 0x56, 0x78,
    ]));
    let mut c = AssetConnection::connect(9, &addr, 1, T).unwrap();
    assert_eq!(c.next_transaction_id(), 1);
    assert_eq!(c.read_registers(0x0010, 2).unwrap(), vec![0x1234, 0x5678]);
    assert_eq!(
        rx.recv().unwrap(),
        [0x00, 0x01, 0x00, 0x00, 0x00, 0x06, 0x01, 0x03, 0x00, 0x10, 0x00, 0x02]
    );
}

#[test]
fn silent_asset_times_out_and_drops_the_link() {
    let (addr, _rx) = capture_server(None);
    let mut c = AssetConnection::connect(9, &addr, 1, Duration::from_millis(150)).unwrap();
    assert!(matches!(c.read_registers(0, 1), Err(NetError::Timeout)));
    assert_eq!(c.state(), ConnState::Disconnected);
}

#[test]
fn preloaded_register_and_transaction_counter() {
    let a = asset();
    let mut c = connect(&a);
    assert_eq!(c.state(), ConnState::Connected);
    assert_eq!(c.read_registers(0x20, 1).unwrap(), vec![0xBEEF]);
    assert_eq!(c.read_registers(0x20, 1).unwrap(), vec![0xBEEF]);
    assert_eq!(c.next_transaction_id(), 3);
}

#[test]
fn bounds_are_enforced_before_sending() {
    let a = asset();
    let mut c = connect(&a);
    assert!(matches!(c.read_registers(0, 126), Err(NetError::CountTooLarge(126))));
    assert!(matches!(c.read_registers(0, 0), Err(NetError::EmptyRequest)));
    assert!(matches!(c.write_registers(0, &[]), Err(NetError::EmptyRequest)));
    assert!(matches!(c.write_registers(0, &[0; 124]), Err(NetError::CountTooLarge(124))));
    assert!(matches!(c.transfer_firmware(&[]), Err(NetError::EmptyRequest)));
    assert_eq!(a.stats().frames_received(), 0);
    assert_eq!(c.read_registers(0, 125).unwrap().len(), 125);
    c.write_registers(0, &[7; 123]).unwrap();
}

#[test]
fn write_read_round_trip_and_illegal_address() {
    let a = asset();
    let mut c = connect(&a);
    c.write_registers(5, &[0x0001]).unwrap();
    assert_eq!(c.read_registers(5, 1).unwrap(), vec![0x0001]);
    assert_eq!(a.peek(5, 1).unwrap(), vec![0x0001]);
    match c.write_registers(0xF000, &[1]) {
        Err(NetError::ExceptionResponse { function, code }) => {
            assert_eq!((function, code), (0x10, 0x02));
        }
        other => panic!("expected exception, got {other:?}"),
    }
    // Exceptions are answers, so the link survives.
    assert_eq!(c.state(), ConnState::Connected);
}

#[test]
fn spans_split_into_protocol_sized_requests() {
    let a = asset();
    let words: Vec<u16> = (0..300).map(|i| i * 3).collect();
    let mut c = connect(&a);
    c.write_span(0x100, &words).unwrap();
    assert_eq!(a.stats().frames_received(), 3);
    assert_eq!(c.read_span(0x100, 300).unwrap(), words);
    assert_eq!(a.stats().frames_received(), 6);
}

#[test]
fn connect_failures() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    assert!(matches!(
        AssetConnection::connect(1, &format!("127.0.0.1:{port}"), 1, T),
        Err(NetError::ConnectRefused(_))
    ));
    assert!(matches!(
        AssetConnection::connect(1, "not an endpoint", 1, T),
        Err(NetError::BadEndpoint(_))
    ));
}

#[test]
fn two_connections_are_independent() {
    let a = asset();
    let mut x = connect(&a);
    let mut y = connect(&a);
    x.disconnect();
    assert_eq!(y.read_registers(0x20, 1).unwrap(), vec![0xBEEF]);
    assert_eq!(a.stats().connections(), 2);
}

#[test]
fn disconnect_is_idempotent() {
    let a = asset();
    let mut c = connect(&a);
    c.disconnect();
    c.disconnect();
    assert_eq!(c.state(), ConnState::Disconnected);
    assert!(matches!(c.read_registers(0, 1), Err(NetError::Disconnected)));
}

#[test]
fn three_kilobyte_image_takes_three_chunks_and_a_commit() {
    let a = asset();
    let image: Vec<u8> = (0..3000u32).map(|i| (i % 251) as u8).collect();
    let proof = connect(&a).transfer_firmware(&image).unwrap();
    let digest = Sha256::digest(&image);
    assert_eq!(proof, hmac_oracle(&KEY, &digest));
    assert_eq!(a.active_digest(), Some(digest.into()));
    assert_eq!(a.stats().frames_received(), 4);
}

#[test]
fn one_byte_image_is_one_chunk() {
    let a = asset();
    let proof = connect(&a).transfer_firmware(&[0x7F]).unwrap();
    assert_eq!(proof, hmac_oracle(&KEY, &Sha256::digest([0x7F])));
    assert_eq!(a.stats().frames_received(), 2);
}

#[test]
fn dropped_ack_is_a_transfer_error() {
    let a = asset();
    a.inject(Faults {
        drop_ack: Some(1),
        ..Faults::default()
    });
    let image = vec![1u8; 2500];
    let r = connect(&a).transfer_firmware(&image);
    assert!(matches!(r, Err(NetError::TransferError(_))), "{r:?}");
    assert_eq!(a.active_digest(), None);
}

#[test]
fn stale_reply_is_discarded_not_surfaced() {
    let a = asset();
    let mut c = connect(&a);
    c.read_registers(0, 1).unwrap();
    a.inject(Faults {
        stale_reply: true,
        ..Faults::default()
    });
    assert_eq!(c.read_registers(0x20, 1).unwrap(), vec![0xBEEF]);
    assert_eq!(c.discarded(), 1);
}

#[test]
fn raw_client_sees_same_state() {
    // Ground truth check independent of the client under test.
    let a = asset();
    connect(&a).write_registers(0x40, &[0xAAAA, 0x5555]).unwrap();
    let mut s = TcpStream::connect(a.local_addr()).unwrap();
    s.write_all(&[0, 9, 0, 0, 0, 6, 1, 3, 0, 0x40, 0, 2]).unwrap();
    let mut buf = [0u8; 13];
    s.read_exact(&mut buf).unwrap();
    assert_eq!(buf, [0, 9, 0, 0, 0, 7, 1, 3, 4, 0xAA, 0xAA, 0x55, 0x55]);
}
