// SPDX-License-Identifier: Apache-2.0

//! Image measurement for attestation.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};

/// Digest used for image measurement. SHA-1 is the default; SHA-256 is
/// available through configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashAlgorithm {
    #[default]
    Sha1,
    Sha256,
}

impl HashAlgorithm {
    pub fn digest_len(self) -> usize {
        match self {
            HashAlgorithm::Sha1 => 20,
            HashAlgorithm::Sha256 => 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// Measurements become the reference digest.
    Training,
    /// Measurements are compared against the reference digest.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Measurement {
    pub image_path: PathBuf,
    pub algorithm: HashAlgorithm,
    pub digest: Vec<u8>,
}

impl Measurement {
    pub fn hex(&self) -> String {
        hex::encode(&self.digest)
    }
}

/// Hashes every byte of the file at `path`.
pub fn measure_image(path: impl AsRef<Path>, algorithm: HashAlgorithm) -> io::Result<Measurement> {
    let path = path.as_ref();
    let mut file = File::open(path)?;
    let digest = match algorithm {
        HashAlgorithm::Sha1 => stream_digest::<Sha1>(&mut file)?,
        HashAlgorithm::Sha256 => stream_digest::<Sha256>(&mut file)?,
    };
    Ok(Measurement {
        image_path: path.to_path_buf(),
        algorithm,
        digest,
    })
}

fn stream_digest<D: Digest>(r: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut hasher = D::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().to_vec())
}
