// SPDX-License-Identifier: Apache-2.0

//! Append-only chronicle log shared by both worlds.
//!
//! One file per world, one JSON object per line:
//!
//! ```text
//! {"seq":7,"world":"NW","timestamp":1700000000123,"principal":"alice","activity":"read","outcome":"ok","latency_ms":4,"detail":"asset=1 addr=0x0010 len=4"}
//! ```
//!
//! `seq` is strictly increasing and `timestamp` non-decreasing within a file,
//! including across process restarts. Any rewrite of earlier bytes that
//! breaks either property is reported by [`check_monotonic`] and refused by
//! [`AuditLog::open`].

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::cmdparse::CommandKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum World {
    #[serde(rename = "NW")]
    Normal,
    #[serde(rename = "SW")]
    Secure,
}

impl fmt::Display for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            World::Normal => "NW",
            World::Secure => "SW",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Denied,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub world: World,
    /// UTC milliseconds since the Unix epoch.
    pub timestamp: i64,
    pub principal: String,
    pub activity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default)]
    pub detail: String,
}

impl AuditRecord {
    /// The closing record of a command: its activity names a command kind
    /// and it carries an outcome.
    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some() && CommandKind::from_verb(&self.activity).is_some()
    }

    /// Reason code carried in the detail as `reason=<code>`, if any.
    pub fn reason(&self) -> Option<&str> {
        self.detail
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix("reason="))
    }
}

/// A record before the log assigns its sequence number and timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub principal: String,
    pub activity: String,
    pub outcome: Option<Outcome>,
    pub latency_ms: Option<u64>,
    pub detail: String,
}

impl AuditEntry {
    pub fn new(principal: impl Into<String>, activity: impl Into<String>) -> Self {
        Self {
            principal: principal.into(),
            activity: activity.into(),
            outcome: None,
            latency_ms: None,
            detail: String::new(),
        }
    }

    pub fn outcome(mut self, outcome: Outcome) -> Self {
        self.outcome = Some(outcome);
        self
    }

    pub fn latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = Some(ms);
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// Inclusive time window in UTC milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub from_ms: i64,
    pub to_ms: i64,
}

impl TimeWindow {
    pub const ALL: TimeWindow = TimeWindow {
        from_ms: i64::MIN,
        to_ms: i64::MAX,
    };

    pub fn new(from_ms: i64, to_ms: i64) -> Self {
        Self { from_ms, to_ms }
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.from_ms && ts <= self.to_ms
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("audit log capacity of {limit} bytes exhausted")]
    StorageFull { limit: u64 },
    #[error("audit log {path}: line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonotonicityViolation {
    #[error("sequence number {found} follows {prev}")]
    Sequence { prev: u64, found: u64 },
    #[error("timestamp {found} precedes {prev} at seq {seq}")]
    Timestamp { prev: i64, found: i64, seq: u64 },
}

/// Checks strictly increasing `seq` and non-decreasing `timestamp`.
pub fn check_monotonic(records: &[AuditRecord]) -> Result<(), MonotonicityViolation> {
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.seq <= a.seq {
            return Err(MonotonicityViolation::Sequence {
                prev: a.seq,
                found: b.seq,
            });
        }
        if b.timestamp < a.timestamp {
            return Err(MonotonicityViolation::Timestamp {
                prev: a.timestamp,
                found: b.timestamp,
                seq: b.seq,
            });
        }
    }
    Ok(())
}

struct LogState {
    file: File,
    next_seq: u64,
    last_ts: i64,
    bytes: u64,
}

/// Append-only audit log for one world.
pub struct AuditLog {
    path: PathBuf,
    world: World,
    clock: Arc<dyn Clock>,
    max_bytes: Option<u64>,
    state: Mutex<LogState>,
}

impl fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuditLog")
            .field("path", &self.path)
            .field("world", &self.world)
            .finish_non_exhaustive()
    }
}

impl AuditLog {
    /// Opens (or creates) the log at `path`, resuming the sequence after the
    /// highest number already on disk.
    pub fn open(path: impl AsRef<Path>, world: World, clock: Arc<dyn Clock>) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let existing = if path.exists() {
            read_file(&path)?
        } else {
            Vec::new()
        };
        check_monotonic(&existing).map_err(|v| AuditError::Corrupt {
            path: path.clone(),
            line: existing.len(),
            reason: v.to_string(),
        })?;
        if let Some(r) = existing.iter().find(|r| r.world != world) {
            return Err(AuditError::Corrupt {
                path,
                line: r.seq as usize,
                reason: format!("record from world {} in {} log", r.world, world),
            });
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let bytes = file.metadata()?.len();
        let (next_seq, last_ts) = existing
            .last()
            .map(|r| (r.seq + 1, r.timestamp))
            .unwrap_or((1, i64::MIN));
        Ok(Self {
            path,
            world,
            clock,
            max_bytes: None,
            state: Mutex::new(LogState {
                file,
                next_seq,
                last_ts,
                bytes,
            }),
        })
    }

    /// Caps the file size; appends past the cap fail with `StorageFull`.
    pub fn with_capacity(mut self, max_bytes: u64) -> Self {
        self.max_bytes = Some(max_bytes);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn world(&self) -> World {
        self.world
    }

    /// Appends one record and returns its sequence number.
    pub fn append(&self, entry: AuditEntry) -> Result<u64, AuditError> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let timestamp = self.clock.now_ms().max(st.last_ts);
        let record = AuditRecord {
            seq: st.next_seq,
            world: self.world,
            timestamp,
            principal: entry.principal,
            activity: entry.activity,
            outcome: entry.outcome,
            latency_ms: entry.latency_ms,
            detail: entry.detail,
        };
        let mut line = serde_json::to_vec(&record).map_err(io::Error::other)?;
        line.push(b'\n');
        if let Some(limit) = self.max_bytes {
            if st.bytes + line.len() as u64 > limit {
                return Err(AuditError::StorageFull { limit });
            }
        }
        st.file.write_all(&line)?;
        st.file.flush()?;
        st.bytes += line.len() as u64;
        st.next_seq += 1;
        st.last_ts = timestamp;
        Ok(record.seq)
    }

    /// All records with a timestamp inside `window`, in sequence order.
    pub fn read(&self, window: TimeWindow) -> Result<Vec<AuditRecord>, AuditError> {
        // Hold the lock so a concurrent append is never observed half-written.
        let _st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let mut records = read_file(&self.path)?;
        records.retain(|r| window.contains(r.timestamp));
        Ok(records)
    }

    pub fn records(&self) -> Result<Vec<AuditRecord>, AuditError> {
        self.read(TimeWindow::ALL)
    }
}

/// Parses a log file without opening it for writing.
pub fn read_file(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: AuditRecord = serde_json::from_str(&line).map_err(|e| AuditError::Corrupt {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
