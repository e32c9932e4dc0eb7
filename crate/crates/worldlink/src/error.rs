// SPDX-License-Identifier: Apache-2.0

use std::io;

use thiserror::Error;

use crate::message::WireError;
use crate::param::TooManyParameters;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("secure world unreachable: {0}")]
    EndpointUnreachable(#[source] io::Error),
    #[error("context is finalized")]
    ContextFinalized,
    #[error("{0} session(s) still open under this context")]
    SessionsStillOpen(usize),
    #[error("attestation failed; session {session_id} closed")]
    AttestationMismatch { session_id: u64 },
    #[error("no trained reference digest for this application")]
    NoTrainedHash,
    #[error("training is disabled in normal mode")]
    TrainingDisabled,
    #[error("image unreadable: {0}")]
    FileUnreadable(String),
    #[error("unknown trusted application `{0}`")]
    UnknownTa(String),
    #[error("session is closed")]
    SessionClosed,
    #[error(transparent)]
    TooManyParameters(#[from] TooManyParameters),
    #[error("trusted application returned {code:#010x}")]
    HandlerError { code: u32 },
    #[error("channel: {0}")]
    Channel(#[from] io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl From<WireError> for WorldError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::ContextFinalized => WorldError::ContextFinalized,
            WireError::SessionsStillOpen { open } => WorldError::SessionsStillOpen(open),
            WireError::AttestationMismatch { session_id } => WorldError::AttestationMismatch { session_id },
            WireError::NoTrainedHash => WorldError::NoTrainedHash,
            WireError::ImageUnreadable { detail } => WorldError::FileUnreadable(detail),
            WireError::UnknownTa { ta_id } => WorldError::UnknownTa(ta_id),
            WireError::SessionClosed => WorldError::SessionClosed,
            WireError::TooManyParameters { count } => WorldError::TooManyParameters(TooManyParameters(count)),
            WireError::HandlerError { code } => WorldError::HandlerError { code },
            WireError::BadRequest { detail } => WorldError::Protocol(detail),
        }
    }
}
