// SPDX-License-Identifier: Apache-2.0

//! Hand-assembled Modbus-TCP frames. The hex strings were written out byte
//! by byte from the MBAP layout, not produced by the encoder.

use ecig_core::modbus::{ModbusFrame, Request, Response};

pub const CANONICAL_READ: &str = "00 01 00 00 00 06 01 03 00 10 00 02";

pub struct Vector {
    pub name: &'static str,
    pub frame: ModbusFrame,
    pub hex: &'static str,
}

pub fn bytes(hex: &str) -> Vec<u8> {
    hex.split_whitespace()
        .map(|b| u8::from_str_radix(b, 16).expect("hex byte"))
        .collect()
}

pub fn vectors() -> Vec<Vector> {
    let v = |name, frame, hex| Vector { name, frame, hex };
    vec![
        v(
            "canonical read",
            Request::ReadHolding { addr: 0x0010, count: 2 }.to_frame(1, 1),
            CANONICAL_READ,
        ),
        v(
            "read one at zero",
            Request::ReadHolding { addr: 0, count: 1 }.to_frame(2, 1),
            "00 02 00 00 00 06 01 03 00 00 00 01",
        ),
        v(
            "read top address, max ids",
            Request::ReadHolding { addr: 0xFFFF, count: 1 }.to_frame(0xFFFF, 0xFF),
            "FF FF 00 00 00 06 FF 03 FF FF 00 01",
        ),
        v(
            "read 125",
            Request::ReadHolding { addr: 0x0100, count: 125 }.to_frame(7, 1),
            "00 07 00 00 00 06 01 03 01 00 00 7D",
        ),
        v(
            "write one word",
            Request::WriteMultiple { addr: 5, words: vec![0x0001] }.to_frame(3, 1),
            "00 03 00 00 00 09 01 10 00 05 00 01 02 00 01",
        ),
        v(
            "write two words unit 2",
            Request::WriteMultiple {
                addr: 0x0200,
                words: vec![0xBEEF, 0x1234],
            }
            .to_frame(4, 2),
            "00 04 00 00 00 0B 02 10 02 00 00 02 04 BE EF 12 34",
        ),
        v(
            "firmware chunk",
            Request::FirmwareChunk {
                index: 0x0102,
                payload: vec![1, 2, 3],
            }
            .to_frame(6, 1),
            "00 06 00 00 00 07 01 64 01 02 01 02 03",
        ),
        v(
            "firmware commit",
            Request::FirmwareCommit.to_frame(8, 1),
            "00 08 00 00 00 02 01 65",
        ),
        v(
            "read response",
            Response::ReadHolding(vec![0xBEEF]).to_frame(1, 1),
            "00 01 00 00 00 05 01 03 02 BE EF",
        ),
        v(
            "illegal address exception",
            Response::Exception {
                function: 0x10,
                code: 0x02,
            }
            .to_frame(9, 1),
            "00 09 00 00 00 03 01 90 02",
        ),
    ]
}
