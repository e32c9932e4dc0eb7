// SPDX-License-Identifier: Apache-2.0

//! Types shared by both worlds of the edge gateway.
//!
//! Everything in here is free of process and network concerns: the command
//! grammar, access-control vocabulary, the Modbus-TCP frame codec, the
//! append-only audit log, the security-manager command protocol and the
//! threat-profile builder.

pub mod access;
pub mod audit;
pub mod clock;
pub mod cmdparse;
pub mod modbus;
pub mod smproto;
pub mod threatprofile;

pub use access::{AccessDecision, AccessKind, DenyReason, Privilege, RegisterRange, Role, SecretKey};
pub use audit::{AuditEntry, AuditLog, AuditRecord, Outcome, TimeWindow, World};
pub use clock::{Clock, ManualClock, SystemClock};
pub use cmdparse::{CommandKind, ParseError, ValidatedCommand};

/// Identifier of a field asset (PLC) as used in the command grammar.
pub type AssetId = u32;
