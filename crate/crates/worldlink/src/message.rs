// SPDX-License-Identifier: Apache-2.0

//! Messages exchanged across the boundary. Payloads travel hex-encoded.

use serde::{Deserialize, Serialize};

use crate::param::{ParamDirection, Parameter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireParam {
    pub direction: ParamDirection,
    #[serde(with = "hex")]
    pub payload: Vec<u8>,
}

impl From<&Parameter> for WireParam {
    fn from(p: &Parameter) -> Self {
        Self {
            direction: p.direction,
            payload: p.payload.clone(),
        }
    }
}

impl From<WireParam> for Parameter {
    fn from(w: WireParam) -> Self {
        Parameter {
            direction: w.direction,
            payload: w.payload,
        }
    }
}

/// Normal world → secure world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Request {
    OpenSession {
        context_id: u64,
        ta_id: String,
        image_path: String,
    },
    InvokeCommand {
        session_id: u64,
        command_id: u32,
        params: Vec<WireParam>,
    },
    CloseSession {
        session_id: u64,
    },
    FinalizeContext {
        context_id: u64,
    },
}

/// Secure world → normal world, one per request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Reply {
    SessionOpened { session_id: u64, attested: bool },
    CommandDone { params: Vec<WireParam> },
    SessionClosed { session_id: u64 },
    ContextFinalized { context_id: u64 },
    Error(WireError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error")]
pub enum WireError {
    ContextFinalized,
    SessionsStillOpen { open: usize },
    /// The image digest did not match; the session was opened and closed at once.
    AttestationMismatch { session_id: u64 },
    NoTrainedHash,
    ImageUnreadable { detail: String },
    UnknownTa { ta_id: String },
    SessionClosed,
    TooManyParameters { count: usize },
    HandlerError { code: u32 },
    BadRequest { detail: String },
}
