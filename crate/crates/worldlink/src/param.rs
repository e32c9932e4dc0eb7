// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Most parameters a single command can carry across the boundary.
pub const MAX_PARAMS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamDirection {
    In,
    Out,
    InOut,
}

impl ParamDirection {
    /// Whether the secure world may rewrite the payload.
    pub fn is_writable(self) -> bool {
        !matches!(self, ParamDirection::In)
    }
}

/// One shared buffer. `Out` and `InOut` payloads are replaced by the secure
/// world's result; `In` payloads come back untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parameter {
    pub direction: ParamDirection,
    pub payload: Vec<u8>,
}

impl Parameter {
    pub fn input(payload: impl Into<Vec<u8>>) -> Self {
        Self {
            direction: ParamDirection::In,
            payload: payload.into(),
        }
    }

    pub fn output() -> Self {
        Self {
            direction: ParamDirection::Out,
            payload: Vec::new(),
        }
    }

    pub fn in_out(payload: impl Into<Vec<u8>>) -> Self {
        Self {
            direction: ParamDirection::InOut,
            payload: payload.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("a command carries at most {MAX_PARAMS} parameters, got {0}")]
pub struct TooManyParameters(pub usize);

/// A command for a trusted application. Holding more than [`MAX_PARAMS`]
/// parameters is unrepresentable: every constructor checks the count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldCommand {
    command_id: u32,
    params: Vec<Parameter>,
}

impl WorldCommand {
    pub fn new(command_id: u32) -> Self {
        Self {
            command_id,
            params: Vec::new(),
        }
    }

    pub fn with_params(command_id: u32, params: Vec<Parameter>) -> Result<Self, TooManyParameters> {
        if params.len() > MAX_PARAMS {
            return Err(TooManyParameters(params.len()));
        }
        Ok(Self { command_id, params })
    }

    /// Builder-style append.
    pub fn param(mut self, p: Parameter) -> Result<Self, TooManyParameters> {
        self.push(p)?;
        Ok(self)
    }

    pub fn push(&mut self, p: Parameter) -> Result<(), TooManyParameters> {
        if self.params.len() == MAX_PARAMS {
            return Err(TooManyParameters(MAX_PARAMS + 1));
        }
        self.params.push(p);
        Ok(())
    }

    pub fn command_id(&self) -> u32 {
        self.command_id
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    /// Payloads of the writable parameters, in order.
    pub fn outputs(&self) -> Vec<Vec<u8>> {
        self.params
            .iter()
            .filter(|p| p.direction.is_writable())
            .map(|p| p.payload.clone())
            .collect()
    }

    pub(crate) fn apply_results(&mut self, results: Vec<Parameter>) {
        for (mine, theirs) in self.params.iter_mut().zip(results) {
            if mine.direction.is_writable() {
                mine.payload = theirs.payload;
            }
        }
    }
}
