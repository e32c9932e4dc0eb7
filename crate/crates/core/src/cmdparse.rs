// SPDX-License-Identifier: Apache-2.0

//! Parser for the maintenance command language.
//!
//! ```text
//! read   <asset id> <addr> <length>
//! write  <asset id> <addr> <length> <word>...
//! update <asset id> <filename>
//! read_s  <key> <asset id> <addr> <length>
//! write_s <key> <asset id> <addr> <length> <word>...
//! store_s <key> <asset id>
//! gen_threat_profile_s <key>
//! ```
//!
//! Numbers are decimal or `0x`-prefixed hex. Words are exactly four hex
//! digits. Keys are 64 hex characters. Verbs are matched exactly and one line
//! carries exactly one command.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{KeyFormatError, SecretKey};
use crate::AssetId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Read,
    Write,
    Update,
    ReadS,
    WriteS,
    StoreS,
    GenThreatProfileS,
}

impl CommandKind {
    pub const ALL: [CommandKind; 7] = [
        CommandKind::Read,
        CommandKind::Write,
        CommandKind::Update,
        CommandKind::ReadS,
        CommandKind::WriteS,
        CommandKind::StoreS,
        CommandKind::GenThreatProfileS,
    ];

    pub fn verb(self) -> &'static str {
        match self {
            CommandKind::Read => "read",
            CommandKind::Write => "write",
            CommandKind::Update => "update",
            CommandKind::ReadS => "read_s",
            CommandKind::WriteS => "write_s",
            CommandKind::StoreS => "store_s",
            CommandKind::GenThreatProfileS => "gen_threat_profile_s",
        }
    }

    pub fn from_verb(verb: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.verb() == verb)
    }

    /// Secured commands carry a key as their first argument.
    pub fn is_secured(self) -> bool {
        matches!(
            self,
            CommandKind::ReadS | CommandKind::WriteS | CommandKind::StoreS | CommandKind::GenThreatProfileS
        )
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.verb())
    }
}

/// A parsed command. Field presence is fixed by the variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidatedCommand {
    Read {
        asset: AssetId,
        addr: u16,
        length: u16,
    },
    Write {
        asset: AssetId,
        addr: u16,
        data: Vec<u16>,
    },
    Update {
        asset: AssetId,
        filename: String,
    },
    ReadS {
        key: SecretKey,
        asset: AssetId,
        addr: u16,
        length: u16,
    },
    WriteS {
        key: SecretKey,
        asset: AssetId,
        addr: u16,
        data: Vec<u16>,
    },
    StoreS {
        key: SecretKey,
        asset: AssetId,
    },
    GenThreatProfileS {
        key: SecretKey,
    },
}

impl ValidatedCommand {
    pub fn kind(&self) -> CommandKind {
        match self {
            ValidatedCommand::Read { .. } => CommandKind::Read,
            ValidatedCommand::Write { .. } => CommandKind::Write,
            ValidatedCommand::Update { .. } => CommandKind::Update,
            ValidatedCommand::ReadS { .. } => CommandKind::ReadS,
            ValidatedCommand::WriteS { .. } => CommandKind::WriteS,
            ValidatedCommand::StoreS { .. } => CommandKind::StoreS,
            ValidatedCommand::GenThreatProfileS { .. } => CommandKind::GenThreatProfileS,
        }
    }

    pub fn key(&self) -> Option<&SecretKey> {
        match self {
            ValidatedCommand::ReadS { key, .. }
            | ValidatedCommand::WriteS { key, .. }
            | ValidatedCommand::StoreS { key, .. }
            | ValidatedCommand::GenThreatProfileS { key } => Some(key),
            _ => None,
        }
    }

    pub fn asset_id(&self) -> Option<AssetId> {
        match self {
            ValidatedCommand::Read { asset, .. }
            | ValidatedCommand::Write { asset, .. }
            | ValidatedCommand::Update { asset, .. }
            | ValidatedCommand::ReadS { asset, .. }
            | ValidatedCommand::WriteS { asset, .. }
            | ValidatedCommand::StoreS { asset, .. } => Some(*asset),
            ValidatedCommand::GenThreatProfileS { .. } => None,
        }
    }

    pub fn addr(&self) -> Option<u16> {
        match self {
            ValidatedCommand::Read { addr, .. }
            | ValidatedCommand::Write { addr, .. }
            | ValidatedCommand::ReadS { addr, .. }
            | ValidatedCommand::WriteS { addr, .. } => Some(*addr),
            _ => None,
        }
    }

    /// Register count: the requested length for reads, the word count for writes.
    pub fn length(&self) -> Option<u16> {
        match self {
            ValidatedCommand::Read { length, .. } | ValidatedCommand::ReadS { length, .. } => Some(*length),
            ValidatedCommand::Write { data, .. } | ValidatedCommand::WriteS { data, .. } => Some(data.len() as u16),
            _ => None,
        }
    }

    pub fn data(&self) -> Option<&[u16]> {
        match self {
            ValidatedCommand::Write { data, .. } | ValidatedCommand::WriteS { data, .. } => Some(data),
            _ => None,
        }
    }

    pub fn filename(&self) -> Option<&str> {
        match self {
            ValidatedCommand::Update { filename, .. } => Some(filename),
            _ => None,
        }
    }

    /// Canonical text form; parses back to an equal command.
    pub fn render(&self) -> String {
        self.render_with(|k| k.to_hex())
    }

    /// Text form with the key replaced by `<key>`, safe for logs.
    pub fn render_redacted(&self) -> String {
        self.render_with(|_| "<key>".to_owned())
    }

    fn render_with(&self, key_fmt: impl Fn(&SecretKey) -> String) -> String {
        let mut parts = vec![self.kind().verb().to_owned()];
        if let Some(k) = self.key() {
            parts.push(key_fmt(k));
        }
        if let Some(a) = self.asset_id() {
            parts.push(a.to_string());
        }
        if let Some(addr) = self.addr() {
            parts.push(format!("{addr:#06x}"));
        }
        if let Some(len) = self.length() {
            parts.push(len.to_string());
        }
        if let Some(data) = self.data() {
            parts.extend(data.iter().map(|w| format!("{w:04X}")));
        }
        if let Some(f) = self.filename() {
            parts.push(f.to_owned());
        }
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty command")]
    EmptyInput,
    #[error("unknown command `{0}`")]
    UnknownVerb(String),
    #[error("`{verb}` expects {expected} arguments, got {found}")]
    ArityMismatch {
        verb: &'static str,
        expected: String,
        found: usize,
    },
    #[error("bad number `{0}`")]
    BadNumber(String),
    #[error("length {expected} but {found} data words")]
    LengthMismatch { expected: usize, found: usize },
    #[error("bad hex `{0}`")]
    BadHex(String),
    #[error("key must be 64 hex characters, got {0}")]
    BadKeyLength(usize),
}

impl ParseError {
    /// Stable code used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::EmptyInput => "EmptyInput",
            ParseError::UnknownVerb(_) => "UnknownVerb",
            ParseError::ArityMismatch { .. } => "ArityMismatch",
            ParseError::BadNumber(_) => "BadNumber",
            ParseError::LengthMismatch { .. } => "LengthMismatch",
            ParseError::BadHex(_) => "BadHex",
            ParseError::BadKeyLength(_) => "BadKeyLength",
        }
    }
}

/// Parses one command line.
pub fn parse(line: &str) -> Result<ValidatedCommand, ParseError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let (&verb, args) = tokens.split_first().ok_or(ParseError::EmptyInput)?;
    let kind = CommandKind::from_verb(verb).ok_or_else(|| ParseError::UnknownVerb(verb.to_owned()))?;

    let arity = |expected: &str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(ParseError::ArityMismatch {
                verb: kind.verb(),
                expected: expected.to_owned(),
                found: args.len(),
            })
        }
    };

    let (key, rest) = if kind.is_secured() {
        arity("at least 1", !args.is_empty())?;
        (Some(parse_key(args[0])?), &args[1..])
    } else {
        (None, args)
    };

    let cmd = match kind {
        CommandKind::Read | CommandKind::ReadS => {
            arity(if key.is_some() { "4" } else { "3" }, rest.len() == 3)?;
            let asset = parse_asset(rest[0])?;
            let addr = parse_u16(rest[1])?;
            let length = parse_length(rest[2])?;
            match key {
                Some(key) => ValidatedCommand::ReadS {
                    key,
                    asset,
                    addr,
                    length,
                },
                None => ValidatedCommand::Read { asset, addr, length },
            }
        }
        CommandKind::Write | CommandKind::WriteS => {
            arity(if key.is_some() { "at least 5" } else { "at least 4" }, rest.len() >= 3)?;
            let asset = parse_asset(rest[0])?;
            let addr = parse_u16(rest[1])?;
            let length = parse_length(rest[2])? as usize;
            let words = &rest[3..];
            if words.len() != length {
                return Err(ParseError::LengthMismatch {
                    expected: length,
                    found: words.len(),
                });
            }
            let data = words.iter().map(|w| parse_word(w)).collect::<Result<Vec<_>, _>>()?;
            match key {
                Some(key) => ValidatedCommand::WriteS { key, asset, addr, data },
                None => ValidatedCommand::Write { asset, addr, data },
            }
        }
        CommandKind::Update => {
            arity("2", rest.len() == 2)?;
            ValidatedCommand::Update {
                asset: parse_asset(rest[0])?,
                filename: rest[1].to_owned(),
            }
        }
        CommandKind::StoreS => {
            arity("2", rest.len() == 1)?;
            ValidatedCommand::StoreS {
                key: key.expect("secured"),
                asset: parse_asset(rest[0])?,
            }
        }
        CommandKind::GenThreatProfileS => {
            arity("1", rest.is_empty())?;
            ValidatedCommand::GenThreatProfileS {
                key: key.expect("secured"),
            }
        }
    };
    Ok(cmd)
}

fn parse_number(tok: &str) -> Result<u64, ParseError> {
    let bad = || ParseError::BadNumber(tok.to_owned());
    let (digits, radix) = match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        Some(h) => (h, 16),
        None => (tok, 10),
    };
    if digits.is_empty() || !digits.chars().all(|c| c.is_digit(radix)) {
        return Err(bad());
    }
    u64::from_str_radix(digits, radix).map_err(|_| bad())
}

fn parse_u16(tok: &str) -> Result<u16, ParseError> {
    let n = parse_number(tok)?;
    u16::try_from(n).map_err(|_| ParseError::BadNumber(tok.to_owned()))
}

fn parse_length(tok: &str) -> Result<u16, ParseError> {
    match parse_u16(tok)? {
        0 => Err(ParseError::BadNumber(tok.to_owned())),
        n => Ok(n),
    }
}

fn parse_asset(tok: &str) -> Result<AssetId, ParseError> {
    let n = parse_number(tok)?;
    match AssetId::try_from(n) {
        Ok(id) if id > 0 => Ok(id),
        _ => Err(ParseError::BadNumber(tok.to_owned())),
    }
}

fn parse_word(tok: &str) -> Result<u16, ParseError> {
    if tok.len() != 4 || !tok.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ParseError::BadHex(tok.to_owned()));
    }
    u16::from_str_radix(tok, 16).map_err(|_| ParseError::BadHex(tok.to_owned()))
}

fn parse_key(tok: &str) -> Result<SecretKey, ParseError> {
    SecretKey::from_hex(tok).map_err(|e| match e {
        KeyFormatError::BadLength(n) => ParseError::BadKeyLength(n),
        KeyFormatError::BadHex => ParseError::BadHex(format!("{}..", &tok[..8.min(tok.len())])),
    })
}
