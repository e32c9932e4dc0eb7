// SPDX-License-Identifier: Apache-2.0

//! The world boundary between the gateway (normal world) and the security
//! manager (secure world).
//!
//! The two worlds run as separate processes joined by a Unix stream socket.
//! The normal world sees the familiar client API shape: a [`WorldContext`]
//! opens [`WorldSession`]s to a trusted application and invokes
//! [`WorldCommand`]s carrying at most four [`Parameter`]s. Opening a session
//! attests the caller's image: the secure world hashes it and compares the
//! result with the digest recorded during training.
//!
//! The secure-world side (session table, attestation, trusted-application
//! dispatch) lives in [`server`] and is only compiled with the
//! `secure-world` feature.

pub mod client;
pub mod error;
pub mod frame;
pub mod measure;
pub mod message;
pub mod param;
#[cfg(feature = "secure-world")]
pub mod server;

pub use client::{WorldContext, WorldSession};
pub use error::WorldError;
pub use measure::{measure_image, HashAlgorithm, Measurement, MeasurementMode};
pub use param::{ParamDirection, Parameter, TooManyParameters, WorldCommand, MAX_PARAMS};
