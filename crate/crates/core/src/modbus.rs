// SPDX-License-Identifier: Apache-2.0

//! Modbus-TCP framing and the PDU subset used by the gateway.
//!
//! ADU layout, big-endian throughout:
//!
//! ```text
//! | txn id (2) | protocol id = 0 (2) | length (2) | unit (1) | function (1) | body |
//! ```
//!
//! `length` counts the unit byte, the function byte and the body. Besides
//! read holding registers (0x03) and write multiple registers (0x10), two
//! user-defined function codes carry firmware: 100 stages one chunk, 101
//! commits the staged image and returns the install proof.

use std::io::{self, Read};

use thiserror::Error;

pub const FC_READ_HOLDING: u8 = 0x03;
pub const FC_WRITE_MULTIPLE: u8 = 0x10;
pub const FC_FIRMWARE_CHUNK: u8 = 100;
pub const FC_FIRMWARE_COMMIT: u8 = 101;

pub const EXC_ILLEGAL_FUNCTION: u8 = 0x01;
pub const EXC_ILLEGAL_DATA_ADDRESS: u8 = 0x02;
pub const EXC_ILLEGAL_DATA_VALUE: u8 = 0x03;
pub const EXC_DEVICE_FAILURE: u8 = 0x04;

pub const MAX_READ_COUNT: u16 = 125;
pub const MAX_WRITE_COUNT: u16 = 123;
pub const MAX_CHUNK_LEN: usize = 1024;

pub const MBAP_LEN: usize = 7;
/// Largest body accepted: a firmware chunk (index + payload).
pub const MAX_BODY_LEN: usize = 2 + MAX_CHUNK_LEN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModbusFrame {
    pub transaction_id: u16,
    pub unit_id: u8,
    pub function: u8,
    pub body: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("protocol id {0} is not Modbus")]
    BadProtocol(u16),
    #[error("MBAP length {0} out of bounds")]
    BadLength(u16),
    #[error("malformed {function:#04x} body: {reason}")]
    BadBody { function: u8, reason: &'static str },
}

impl ModbusFrame {
    pub fn new(transaction_id: u16, unit_id: u8, function: u8, body: Vec<u8>) -> Self {
        Self {
            transaction_id,
            unit_id,
            function,
            body,
        }
    }

    /// Value of the MBAP length field for this frame.
    pub fn mbap_length(&self) -> u16 {
        (2 + self.body.len()) as u16
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MBAP_LEN + 1 + self.body.len());
        out.extend_from_slice(&self.transaction_id.to_be_bytes());
        out.extend_from_slice(&0u16.to_be_bytes());
        out.extend_from_slice(&self.mbap_length().to_be_bytes());
        out.push(self.unit_id);
        out.push(self.function);
        out.extend_from_slice(&self.body);
        out
    }

    /// Decodes one frame from the front of `buf`, returning it and the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Self, usize), FrameError> {
        if buf.len() < MBAP_LEN + 1 {
            return Err(FrameError::Truncated {
                need: MBAP_LEN + 1,
                have: buf.len(),
            });
        }
        let txn = u16::from_be_bytes([buf[0], buf[1]]);
        let proto = u16::from_be_bytes([buf[2], buf[3]]);
        let len = u16::from_be_bytes([buf[4], buf[5]]);
        if proto != 0 {
            return Err(FrameError::BadProtocol(proto));
        }
        if len < 2 || usize::from(len) > 2 + MAX_BODY_LEN {
            return Err(FrameError::BadLength(len));
        }
        let total = 6 + usize::from(len);
        if buf.len() < total {
            return Err(FrameError::Truncated {
                need: total,
                have: buf.len(),
            });
        }
        let frame = ModbusFrame {
            transaction_id: txn,
            unit_id: buf[6],
            function: buf[7],
            body: buf[8..total].to_vec(),
        };
        Ok((frame, total))
    }

    /// Reads exactly one frame from a stream.
    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Self> {
        let mut head = [0u8; MBAP_LEN];
        r.read_exact(&mut head)?;
        let proto = u16::from_be_bytes([head[2], head[3]]);
        let len = u16::from_be_bytes([head[4], head[5]]);
        if proto != 0 || len < 2 || usize::from(len) > 2 + MAX_BODY_LEN {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad MBAP header"));
        }
        let mut rest = vec![0u8; usize::from(len) - 1];
        r.read_exact(&mut rest)?;
        Ok(ModbusFrame {
            transaction_id: u16::from_be_bytes([head[0], head[1]]),
            unit_id: head[6],
            function: rest[0],
            body: rest[1..].to_vec(),
        })
    }

    pub fn is_exception(&self) -> bool {
        self.function & 0x80 != 0
    }
}

/// Request PDUs understood by the simulator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    ReadHolding { addr: u16, count: u16 },
    WriteMultiple { addr: u16, words: Vec<u16> },
    FirmwareChunk { index: u16, payload: Vec<u8> },
    FirmwareCommit,
}

/// Response PDUs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    ReadHolding(Vec<u16>),
    WriteMultiple { addr: u16, count: u16 },
    FirmwareChunkAck { index: u16 },
    FirmwareCommit { proof: [u8; 32] },
    Exception { function: u8, code: u8 },
}

impl Request {
    pub fn function(&self) -> u8 {
        match self {
            Request::ReadHolding { .. } => FC_READ_HOLDING,
            Request::WriteMultiple { .. } => FC_WRITE_MULTIPLE,
            Request::FirmwareChunk { .. } => FC_FIRMWARE_CHUNK,
            Request::FirmwareCommit => FC_FIRMWARE_COMMIT,
        }
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Request::ReadHolding { addr, count } => {
                b.extend_from_slice(&addr.to_be_bytes());
                b.extend_from_slice(&count.to_be_bytes());
            }
            Request::WriteMultiple { addr, words } => {
                b.extend_from_slice(&addr.to_be_bytes());
                b.extend_from_slice(&(words.len() as u16).to_be_bytes());
                b.push((words.len() * 2) as u8);
                for w in words {
                    b.extend_from_slice(&w.to_be_bytes());
                }
            }
            Request::FirmwareChunk { index, payload } => {
                b.extend_from_slice(&index.to_be_bytes());
                b.extend_from_slice(payload);
            }
            Request::FirmwareCommit => {}
        }
        b
    }

    pub fn to_frame(&self, transaction_id: u16, unit_id: u8) -> ModbusFrame {
        ModbusFrame::new(transaction_id, unit_id, self.function(), self.encode_body())
    }

    pub fn decode(function: u8, body: &[u8]) -> Result<Self, FrameError> {
        let bad = |reason| FrameError::BadBody { function, reason };
        match function {
            FC_READ_HOLDING => {
                if body.len() != 4 {
                    return Err(bad("expected 4 bytes"));
                }
                Ok(Request::ReadHolding {
                    addr: u16::from_be_bytes([body[0], body[1]]),
                    count: u16::from_be_bytes([body[2], body[3]]),
                })
            }
            FC_WRITE_MULTIPLE => {
                if body.len() < 5 {
                    return Err(bad("header too short"));
                }
                let addr = u16::from_be_bytes([body[0], body[1]]);
                let count = u16::from_be_bytes([body[2], body[3]]);
                let nbytes = usize::from(body[4]);
                if nbytes != usize::from(count) * 2 || body.len() != 5 + nbytes {
                    return Err(bad("byte count disagrees with quantity"));
                }
                let words = body[5..]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
                    .collect();
                Ok(Request::WriteMultiple { addr, words })
            }
            FC_FIRMWARE_CHUNK => {
                if body.len() < 2 {
                    return Err(bad("missing chunk index"));
                }
                if body.len() - 2 > MAX_CHUNK_LEN {
                    return Err(bad("chunk too large"));
                }
                Ok(Request::FirmwareChunk {
                    index: u16::from_be_bytes([body[0], body[1]]),
                    payload: body[2..].to_vec(),
                })
            }
            FC_FIRMWARE_COMMIT => {
                if !body.is_empty() {
                    return Err(bad("commit carries no body"));
                }
                Ok(Request::FirmwareCommit)
            }
            _ => Err(bad("unsupported function")),
        }
    }
}

impl Response {
    pub fn function(&self) -> u8 {
        match self {
            Response::ReadHolding(_) => FC_READ_HOLDING,
            Response::WriteMultiple { .. } => FC_WRITE_MULTIPLE,
            Response::FirmwareChunkAck { .. } => FC_FIRMWARE_CHUNK,
            Response::FirmwareCommit { .. } => FC_FIRMWARE_COMMIT,
            Response::Exception { function, .. } => function | 0x80,
        }
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Response::ReadHolding(words) => {
                b.push((words.len() * 2) as u8);
                for w in words {
                    b.extend_from_slice(&w.to_be_bytes());
                }
            }
            Response::WriteMultiple { addr, count } => {
                b.extend_from_slice(&addr.to_be_bytes());
                b.extend_from_slice(&count.to_be_bytes());
            }
            Response::FirmwareChunkAck { index } => b.extend_from_slice(&index.to_be_bytes()),
            Response::FirmwareCommit { proof } => b.extend_from_slice(proof),
            Response::Exception { code, .. } => b.push(*code),
        }
        b
    }

    pub fn to_frame(&self, transaction_id: u16, unit_id: u8) -> ModbusFrame {
        ModbusFrame::new(transaction_id, unit_id, self.function(), self.encode_body())
    }

    pub fn decode(function: u8, body: &[u8]) -> Result<Self, FrameError> {
        let bad = |reason| FrameError::BadBody { function, reason };
        if function & 0x80 != 0 {
            if body.len() != 1 {
                return Err(bad("exception carries one code byte"));
            }
            return Ok(Response::Exception {
                function: function & 0x7F,
                code: body[0],
            });
        }
        match function {
            FC_READ_HOLDING => {
                let n = *body.first().ok_or(bad("missing byte count"))? as usize;
                if !n.is_multiple_of(2) || body.len() != 1 + n {
                    return Err(bad("byte count disagrees with body"));
                }
                Ok(Response::ReadHolding(
                    body[1..]
                        .chunks_exact(2)
                        .map(|c| u16::from_be_bytes([c[0], c[1]]))
                        .collect(),
                ))
            }
            FC_WRITE_MULTIPLE => {
                if body.len() != 4 {
                    return Err(bad("expected 4 bytes"));
                }
                Ok(Response::WriteMultiple {
                    addr: u16::from_be_bytes([body[0], body[1]]),
                    count: u16::from_be_bytes([body[2], body[3]]),
                })
            }
            FC_FIRMWARE_CHUNK => {
                if body.len() != 2 {
                    return Err(bad("expected chunk index"));
                }
                Ok(Response::FirmwareChunkAck {
                    index: u16::from_be_bytes([body[0], body[1]]),
                })
            }
            FC_FIRMWARE_COMMIT => {
                let proof: [u8; 32] = body.try_into().map_err(|_| bad("proof must be 32 bytes"))?;
                Ok(Response::FirmwareCommit { proof })
            }
            _ => Err(bad("unsupported function")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_read_request_bytes() {
        let frame = Request::ReadHolding { addr: 0x0010, count: 2 }.to_frame(1, 1);
        assert_eq!(
            frame.encode(),
            [0x00, 0x01, 0x00, 0x00, 0x00, 0x06, 0x01, 0x03, 0x00, 0x10, 0x00, 0x02]
        );
    }

    #[test]
    fn exception_response_sets_high_bit() {
        let f = Response::Exception {
            function: 0x63,
            code: EXC_ILLEGAL_FUNCTION,
        }
        .to_frame(9, 1);
        assert_eq!(f.function, 0xE3);
        assert_eq!(f.encode(), [0, 9, 0, 0, 0, 3, 1, 0xE3, 0x01]);
        let back = Response::decode(f.function, &f.body).unwrap();
        assert_eq!(
            back,
            Response::Exception {
                function: 0x63,
                code: 1
            }
        );
    }

    #[test]
    fn decode_rejects_bad_headers() {
        let mut bytes = Request::ReadHolding { addr: 0, count: 1 }.to_frame(1, 1).encode();
        bytes[3] = 1;
        assert_eq!(ModbusFrame::decode(&bytes), Err(FrameError::BadProtocol(1)));
        assert!(matches!(
            ModbusFrame::decode(&bytes[..5]),
            Err(FrameError::Truncated { .. })
        ));
        let mut bytes = Request::ReadHolding { addr: 0, count: 1 }.to_frame(1, 1).encode();
        bytes[5] = 1;
        assert_eq!(ModbusFrame::decode(&bytes), Err(FrameError::BadLength(1)));
    }

    #[test]
    fn write_body_checks_byte_count() {
        let mut body = Request::WriteMultiple {
            addr: 5,
            words: vec![1, 2],
        }
        .encode_body();
        body[4] = 3;
        assert!(Request::decode(FC_WRITE_MULTIPLE, &body).is_err());
    }

    fn arb_frame() -> impl Strategy<Value = ModbusFrame> {
        (any::<u16>(), any::<u8>(), any::<u8>(), prop::collection::vec(any::<u8>(), 0..=MAX_BODY_LEN))
            .prop_map(|(t, u, f, b)| ModbusFrame::new(t, u, f, b))
    }

    fn arb_request() -> impl Strategy<Value = Request> {
        prop_oneof![
            (any::<u16>(), any::<u16>()).prop_map(|(addr, count)| Request::ReadHolding { addr, count }),
            (any::<u16>(), prop::collection::vec(any::<u16>(), 0..=123))
                .prop_map(|(addr, words)| Request::WriteMultiple { addr, words }),
            (any::<u16>(), prop::collection::vec(any::<u8>(), 0..=MAX_CHUNK_LEN))
                .prop_map(|(index, payload)| Request::FirmwareChunk { index, payload }),
            Just(Request::FirmwareCommit),
        ]
    }

    proptest! {
        #[test]
        fn frame_round_trip(frame in arb_frame()) {
            let bytes = frame.encode();
            prop_assert_eq!(usize::from(frame.mbap_length()), 2 + frame.body.len());
            let (back, used) = ModbusFrame::decode(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(&back, &frame);
            let streamed = ModbusFrame::read_from(&mut &bytes[..]).unwrap();
            prop_assert_eq!(streamed, frame);
        }

        #[test]
        fn request_round_trip(req in arb_request(), txn in any::<u16>()) {
            let frame = req.to_frame(txn, 1);
            prop_assert_eq!(Request::decode(frame.function, &frame.body).unwrap(), req);
        }
    }
}
