//! Parameter-blob checkpoint I/O shared by the sequence models and the
//! classifier: a flat little-endian `f64` file whose SHA-256 digest is pinned
//! in each model's JSON sidecar.

use crate::tensor::ParamStore;
use sha2::{Digest, Sha256};
use std::path::Path;

pub(crate) const BLOB_FILE: &str = "params.bin";

#[derive(Debug, thiserror::Error)]
pub(crate) enum BlobError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint integrity failure: stored digest {expected} but blob hashes to {found}")]
    Integrity { expected: String, found: String },
    #[error("blob holds {found} bytes but the model needs {expected}")]
    Size { expected: usize, found: usize },
}

/// Write `dir/params.bin` and return its hex digest for the sidecar.
pub(crate) fn write_param_blob(dir: &Path, store: &ParamStore) -> Result<String, BlobError> {
    std::fs::create_dir_all(dir).map_err(|source| BlobError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut bytes = Vec::with_capacity(store.total_elements() * 8);
    for x in store.to_flat() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let digest = hex::encode(Sha256::digest(&bytes));
    let path = dir.join(BLOB_FILE);
    std::fs::write(&path, &bytes).map_err(|source| BlobError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(digest)
}

/// Read `dir/params.bin`, verifying the digest recorded in the sidecar and
/// the element count implied by the model's configuration.
pub(crate) fn read_param_blob(
    dir: &Path,
    expected_digest: &str,
    expected_elements: usize,
) -> Result<Vec<f64>, BlobError> {
    let path = dir.join(BLOB_FILE);
    let bytes = std::fs::read(&path).map_err(|source| BlobError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let digest = hex::encode(Sha256::digest(&bytes));
    if digest != expected_digest {
        return Err(BlobError::Integrity {
            expected: expected_digest.to_string(),
            found: digest,
        });
    }
    if bytes.len() != expected_elements * 8 {
        return Err(BlobError::Size {
            expected: expected_elements * 8,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
