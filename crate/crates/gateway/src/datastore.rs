// SPDX-License-Identifier: Apache-2.0

//! Database client (DC): encrypted record and profile storage plus the
//! normal-world audit log.
//!
//! Layout under the data directory:
//!
//! ```text
//! store/confidential/<asset>/<record_id>.bin
//! store/non_confidential/<asset>/<record_id>.bin
//! profiles/<profile_id>.bin
//! logs/nw.log
//! ```
//!
//! Every `.bin` file is `nonce (12 bytes) || AES-256-GCM ciphertext`. The
//! associated data binds the ciphertext to its location, so a file moved to
//! another category or asset fails to decrypt.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use ecig_core::access::{Privilege, SecretKey};
use ecig_core::audit::{AuditError, AuditLog, AuditRecord, TimeWindow, World};
use ecig_core::clock::Clock;
use ecig_core::AssetId;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const NONCE_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Confidential,
    NonConfidential,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Confidential, Category::NonConfidential];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Confidential => "confidential",
            Category::NonConfidential => "non_confidential",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// A captured register snapshot of one category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub record_id: u64,
    pub asset_id: AssetId,
    pub category: Category,
    /// UTC milliseconds.
    pub captured_at: i64,
    pub snapshot: BTreeMap<u16, u16>,
}

/// A record before an id is assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewRecord {
    pub asset_id: AssetId,
    pub category: Category,
    pub captured_at: i64,
    pub snapshot: BTreeMap<u16, u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordReceipt {
    pub record_id: u64,
    pub asset_id: AssetId,
    pub category: Category,
    pub registers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecordFilter {
    pub asset: Option<AssetId>,
    pub category: Option<Category>,
    pub window: Option<TimeWindow>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage: {0}")]
    Io(#[from] io::Error),
    #[error("no storage key available")]
    NoStorageKey,
    #[error("confidential records need full privilege")]
    RoleForbidden,
    #[error("{0} failed authentication; stored data was modified")]
    DecryptFailure(PathBuf),
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("audit log: {0}")]
    Audit(#[from] AuditError),
}

/// Which world logs to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldFilter {
    Normal,
    Secure,
    Both,
}

struct Sealer {
    cipher: Aes256Gcm,
}

impl Sealer {
    fn new(key: &SecretKey) -> Self {
        Self {
            cipher: Aes256Gcm::new(&Key::<Aes256Gcm>::from(*key.as_bytes())),
        }
    }

    fn seal(&self, aad: &str, plaintext: &[u8]) -> Vec<u8> {
        let mut nonce = [0u8; NONCE_LEN];
        rand::rng().fill_bytes(&mut nonce);
        let ct = self
            .cipher
            .encrypt(
                &Nonce::from(nonce),
                Payload {
                    msg: plaintext,
                    aad: aad.as_bytes(),
                },
            )
            .expect("AES-GCM encryption is infallible for in-memory buffers");
        let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&ct);
        out
    }

    fn open(&self, aad: &str, blob: &[u8]) -> Option<Vec<u8>> {
        let (nonce, ct) = blob.split_at_checked(NONCE_LEN)?;
        let nonce = Nonce::try_from(nonce).ok()?;
        self.cipher
            .decrypt(
                &nonce,
                Payload {
                    msg: ct,
                    aad: aad.as_bytes(),
                },
            )
            .ok()
    }
}

fn record_aad(category: Category, asset: AssetId, id: u64) -> String {
    format!("{}/{asset}/{id}", category.as_str())
}

fn profile_aad(id: u64) -> String {
    format!("profile/{id}")
}

struct Counters {
    next_record: u64,
    next_profile: u64,
}

pub struct DataStore {
    root: PathBuf,
    sealer: Option<Sealer>,
    counters: Mutex<Counters>,
    nw_log: Arc<AuditLog>,
    sw_log: Option<PathBuf>,
}

impl std::fmt::Debug for DataStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DataStore").field("root", &self.root).finish_non_exhaustive()
    }
}

impl DataStore {
    /// Opens the store under `root`. Without a key, records and profiles are
    /// unavailable but the audit log works.
    pub fn open(root: impl Into<PathBuf>, key: Option<SecretKey>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let root = root.into();
        for c in Category::ALL {
            fs::create_dir_all(root.join("store").join(c.as_str()))?;
        }
        fs::create_dir_all(root.join("profiles"))?;
        let nw_log = Arc::new(AuditLog::open(root.join("logs").join("nw.log"), World::Normal, clock)?);
        let next_record = max_id_under(&root.join("store"))? + 1;
        let next_profile = max_id_under(&root.join("profiles"))? + 1;
        Ok(Self {
            root,
            sealer: key.as_ref().map(Sealer::new),
            counters: Mutex::new(Counters {
                next_record,
                next_profile,
            }),
            nw_log,
            sw_log: None,
        })
    }

    /// Also read the secure-world log at `path` in [`read_logs`](Self::read_logs).
    pub fn with_sw_log(mut self, path: impl Into<PathBuf>) -> Self {
        self.sw_log = Some(path.into());
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.nw_log
    }

    fn counters(&self) -> MutexGuard<'_, Counters> {
        self.counters.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn sealer(&self) -> Result<&Sealer, StoreError> {
        self.sealer.as_ref().ok_or(StoreError::NoStorageKey)
    }

    pub fn record_path(&self, category: Category, asset: AssetId, id: u64) -> PathBuf {
        self.root
            .join("store")
            .join(category.as_str())
            .join(asset.to_string())
            .join(format!("{id}.bin"))
    }

    pub fn put_record(&self, rec: NewRecord) -> Result<RecordReceipt, StoreError> {
        Ok(self.put_records(vec![rec])?.remove(0))
    }

    /// Persists every record or none. Files are written under temporary
    /// names first and renamed into place once all writes succeeded.
    pub fn put_records(&self, recs: Vec<NewRecord>) -> Result<Vec<RecordReceipt>, StoreError> {
        let sealer = self.sealer()?;
        let first = {
            let mut c = self.counters();
            let first = c.next_record;
            c.next_record += recs.len() as u64;
            first
        };
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        let mut receipts = Vec::new();
        let result = (|| {
            for (i, r) in recs.into_iter().enumerate() {
                let id = first + i as u64;
                let stored = StoredRecord {
                    record_id: id,
                    asset_id: r.asset_id,
                    category: r.category,
                    captured_at: r.captured_at,
                    snapshot: r.snapshot,
                };
                let plain = serde_json::to_vec(&stored).expect("records serialize");
                let blob = sealer.seal(&record_aad(r.category, r.asset_id, id), &plain);
                let path = self.record_path(r.category, r.asset_id, id);
                fs::create_dir_all(path.parent().expect("record path has a parent"))?;
                let tmp = path.with_extension("tmp");
                fs::write(&tmp, blob)?;
                staged.push((tmp, path));
                receipts.push(RecordReceipt {
                    record_id: id,
                    asset_id: stored.asset_id,
                    category: stored.category,
                    registers: stored.snapshot.len(),
                });
            }
            for (tmp, path) in &staged {
                fs::rename(tmp, path)?;
            }
            Ok::<_, StoreError>(())
        })();
        if let Err(e) = result {
            for (tmp, path) in &staged {
                let _ = fs::remove_file(tmp);
                let _ = fs::remove_file(path);
            }
            return Err(e);
        }
        Ok(receipts)
    }

    /// Decrypts and returns matching records ordered by id.
    pub fn get_records(&self, filter: RecordFilter, privilege: Privilege) -> Result<Vec<StoredRecord>, StoreError> {
        let categories: Vec<Category> = match (filter.category, privilege) {
            (Some(Category::Confidential), Privilege::NonConfidentialOnly) => return Err(StoreError::RoleForbidden),
            (Some(c), _) => vec![c],
            (None, Privilege::NonConfidentialOnly) => vec![Category::NonConfidential],
            (None, Privilege::Full) => Category::ALL.to_vec(),
        };
        let sealer = self.sealer()?;
        let mut out = Vec::new();
        for c in categories {
            let dir = self.root.join("store").join(c.as_str());
            for asset_dir in read_dir_sorted(&dir)? {
                let Some(asset) = file_stem_number(&asset_dir).map(|n| n as AssetId) else {
                    continue;
                };
                if filter.asset.is_some_and(|a| a != asset) {
                    continue;
                }
                for file in read_dir_sorted(&asset_dir)? {
                    if file.extension().and_then(|e| e.to_str()) != Some("bin") {
                        continue;
                    }
                    let Some(id) = file_stem_number(&file) else {
                        continue;
                    };
                    let blob = fs::read(&file)?;
                    let plain = sealer
                        .open(&record_aad(c, asset, id), &blob)
                        .ok_or_else(|| StoreError::DecryptFailure(file.clone()))?;
                    let rec: StoredRecord = serde_json::from_slice(&plain).map_err(|e| StoreError::Corrupt {
                        path: file.clone(),
                        reason: e.to_string(),
                    })?;
                    if filter.window.is_some_and(|w| !w.contains(rec.captured_at)) {
                        continue;
                    }
                    out.push(rec);
                }
            }
        }
        out.sort_by_key(|r| r.record_id);
        Ok(out)
    }

    /// Stores an opaque profile document and returns its id.
    pub fn put_profile(&self, doc: &[u8]) -> Result<u64, StoreError> {
        let sealer = self.sealer()?;
        let id = {
            let mut c = self.counters();
            let id = c.next_profile;
            c.next_profile += 1;
            id
        };
        let path = self.root.join("profiles").join(format!("{id}.bin"));
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, sealer.seal(&profile_aad(id), doc))?;
        fs::rename(&tmp, &path)?;
        Ok(id)
    }

    pub fn get_profile(&self, id: u64) -> Result<Option<Vec<u8>>, StoreError> {
        let sealer = self.sealer()?;
        let path = self.root.join("profiles").join(format!("{id}.bin"));
        let blob = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        sealer
            .open(&profile_aad(id), &blob)
            .map(Some)
            .ok_or(StoreError::DecryptFailure(path))
    }

    /// Ids of stored profiles, ascending.
    pub fn profile_ids(&self) -> Result<Vec<u64>, StoreError> {
        let mut ids: Vec<u64> = read_dir_sorted(&self.root.join("profiles"))?
            .iter()
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("bin"))
            .filter_map(|p| file_stem_number(p))
            .collect();
        ids.sort_unstable();
        Ok(ids)
    }

    /// Audit records inside `window`, normal world first, each in sequence
    /// order.
    pub fn read_logs(&self, window: TimeWindow, worlds: WorldFilter) -> Result<Vec<AuditRecord>, StoreError> {
        let mut out = Vec::new();
        if matches!(worlds, WorldFilter::Normal | WorldFilter::Both) {
            out.extend(self.nw_log.read(window)?);
        }
        if matches!(worlds, WorldFilter::Secure | WorldFilter::Both) {
            if let Some(p) = &self.sw_log {
                if p.exists() {
                    out.extend(
                        ecig_core::audit::read_file(p)?
                            .into_iter()
                            .filter(|r| window.contains(r.timestamp)),
                    );
                }
            }
        }
        Ok(out)
    }
}

fn read_dir_sorted(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    v.sort();
    Ok(v)
}

fn file_stem_number(p: &Path) -> Option<u64> {
    p.file_stem()?.to_str()?.parse().ok()
}

fn max_id_under(dir: &Path) -> io::Result<u64> {
    let mut max = 0;
    for entry in read_dir_sorted(dir)? {
        if entry.is_dir() {
            max = max.max(max_id_under(&entry)?);
        } else if entry.extension().and_then(|e| e.to_str()) == Some("bin") {
            max = max.max(file_stem_number(&entry).unwrap_or(0));
        }
    }
    Ok(max)
}
