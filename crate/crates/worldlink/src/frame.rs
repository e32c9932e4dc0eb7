// SPDX-License-Identifier: Apache-2.0

//! Channel framing: a 4-byte big-endian body length followed by one UTF-8
//! JSON message.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// Upper bound on a single message body.
pub const MAX_FRAME_LEN: usize = 8 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame shorter than its length prefix")]
    Truncated,
    #[error("frame body of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("frame body is not a valid message: {0}")]
    BadMessage(#[from] serde_json::Error),
}

/// Encodes a message as a complete frame.
pub fn encode<M: Serialize>(msg: &M) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("wire messages always serialize");
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes a complete frame.
pub fn decode<M: DeserializeOwned>(frame: &[u8]) -> Result<M, FrameError> {
    let (len, body) = frame.split_at_checked(4).ok_or(FrameError::Truncated)?;
    let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    if body.len() != len {
        return Err(FrameError::Truncated);
    }
    Ok(serde_json::from_slice(body)?)
}

pub fn write_message<W: Write, M: Serialize>(w: &mut W, msg: &M) -> io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any byte.
pub fn read_message<R: Read, M: DeserializeOwned>(r: &mut R) -> io::Result<Option<M>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, FrameError::TooLarge(len)));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Reply, Request, WireError, WireParam};
    use crate::param::ParamDirection;
    use proptest::prelude::*;

    #[test]
    fn close_session_frame_bytes() {
        let frame = encode(&Request::CloseSession { session_id: 7 });
        let body = br#"{"kind":"CloseSession","session_id":7}"#;
        assert_eq!(&frame[..4], &(body.len() as u32).to_be_bytes());
        assert_eq!(&frame[4..], body);
    }

    #[test]
    fn payloads_travel_as_hex() {
        let frame = encode(&Request::InvokeCommand {
            session_id: 1,
            command_id: 0,
            params: vec![WireParam {
                direction: ParamDirection::In,
                payload: b"AB".to_vec(),
            }],
        });
        let text = std::str::from_utf8(&frame[4..]).unwrap();
        assert!(text.contains(r#""payload":"4142""#), "{text}");
    }

    #[test]
    fn truncated_and_oversized_frames() {
        let mut frame = encode(&Request::CloseSession { session_id: 1 });
        frame.pop();
        assert!(matches!(decode::<Request>(&frame), Err(FrameError::Truncated)));
        assert!(matches!(decode::<Request>(&[0, 0]), Err(FrameError::Truncated)));
        let huge = [0xFF, 0xFF, 0xFF, 0xFF];
        assert!(matches!(decode::<Request>(&huge), Err(FrameError::TooLarge(_))));
    }

    #[test]
    fn stream_eof_is_none() {
        let empty: &[u8] = &[];
        assert!(read_message::<_, Request>(&mut &empty[..]).unwrap().is_none());
    }

    fn arb_param() -> impl Strategy<Value = WireParam> {
        (
            prop_oneof![
                Just(ParamDirection::In),
                Just(ParamDirection::Out),
                Just(ParamDirection::InOut)
            ],
            prop::collection::vec(any::<u8>(), 0..64),
        )
            .prop_map(|(direction, payload)| WireParam { direction, payload })
    }

    fn arb_request() -> impl Strategy<Value = Request> {
        prop_oneof![
            (any::<u64>(), "[a-z.\\-]{1,20}", "[ -~]{0,40}").prop_map(|(context_id, ta_id, image_path)| {
                Request::OpenSession {
                    context_id,
                    ta_id,
                    image_path,
                }
            }),
            (any::<u64>(), any::<u32>(), prop::collection::vec(arb_param(), 0..=4)).prop_map(
                |(session_id, command_id, params)| Request::InvokeCommand {
                    session_id,
                    command_id,
                    params
                }
            ),
            any::<u64>().prop_map(|session_id| Request::CloseSession { session_id }),
            any::<u64>().prop_map(|context_id| Request::FinalizeContext { context_id }),
        ]
    }

    fn arb_reply() -> impl Strategy<Value = Reply> {
        prop_oneof![
            (any::<u64>(), any::<bool>())
                .prop_map(|(session_id, attested)| Reply::SessionOpened { session_id, attested }),
            prop::collection::vec(arb_param(), 0..=4).prop_map(|params| Reply::CommandDone { params }),
            any::<u64>().prop_map(|session_id| Reply::SessionClosed { session_id }),
            any::<u32>().prop_map(|code| Reply::Error(WireError::HandlerError { code })),
            any::<u64>().prop_map(|session_id| Reply::Error(WireError::AttestationMismatch { session_id })),
        ]
    }

    proptest! {
        #[test]
        fn request_frames_round_trip(req in arb_request()) {
            let frame = encode(&req);
            let back: Request = decode(&frame).unwrap();
            prop_assert_eq!(encode(&back), frame);
            prop_assert_eq!(back, req);
        }

        #[test]
        fn reply_frames_round_trip(rep in arb_reply()) {
            let frame = encode(&rep);
            let back: Reply = decode(&frame).unwrap();
            prop_assert_eq!(encode(&back), frame);
        }
    }
}
