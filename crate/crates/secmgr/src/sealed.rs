// SPDX-License-Identifier: Apache-2.0

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::os::unix::fs::OpenOptionsExt;
use std::path::PathBuf;

use ecig_core::access::SecretKey;
use rand::RngCore;

/// Data-at-rest key kept in secure-world storage. Generated on first use,
/// then read back on every later call and across restarts.
#[derive(Debug)]
pub struct SealedKey {
    path: PathBuf,
    cached: Option<SecretKey>,
}

impl SealedKey {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            cached: None,
        }
    }

    pub fn get_or_create(&mut self) -> io::Result<SecretKey> {
        if let Some(k) = self.cached {
            return Ok(k);
        }
        let key = match fs::read(&self.path) {
            Ok(bytes) => SecretKey::from_slice(&bytes)
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "sealed key has the wrong length"))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => self.generate()?,
            Err(e) => return Err(e),
        };
        self.cached = Some(key);
        Ok(key)
    }

    fn generate(&self) -> io::Result<SecretKey> {
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = self.path.with_extension("tmp");
        let mut f = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .mode(0o600)
            .open(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, &self.path)?;
        Ok(SecretKey::from_bytes(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    #[test]
    fn generated_once_and_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("storage.key");
        let first = SealedKey::new(&path).get_or_create().unwrap();
        let second = SealedKey::new(&path).get_or_create().unwrap();
        assert_eq!(first, second);
        assert_eq!(fs::metadata(&path).unwrap().permissions().mode() & 0o777, 0o600);
    }
}
