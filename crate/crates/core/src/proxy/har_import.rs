use std::path::Path;

use thiserror::Error;

use crate::har::{parse_har, HarEntry, HarError};
use crate::model::SnapshotId;

use super::store::{Recorded, SnapshotStore, StoreError};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Har(#[from] HarError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Imports a HAR 1.2 file as a sealed snapshot. Returns the snapshot id
/// and the number of records stored.
pub fn import_har(path: impl AsRef<Path>, store: &SnapshotStore) -> Result<(SnapshotId, usize), ImportError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    import_har_bytes(&bytes, store)
}

pub fn import_har_bytes(bytes: &[u8], store: &SnapshotStore) -> Result<(SnapshotId, usize), ImportError> {
    let entries = parse_har(bytes)?;
    let index = index_entry(&entries).ok_or(HarError::Empty)?;
    let mut writer = store.begin(&index.url)?;
    let mut count = 0;
    for e in &entries {
        // A repeated URL keeps its first response.
        let added = writer.add(
            &e.url,
            Recorded {
                status: e.status,
                media_type: e.media_type.clone(),
                headers: e.headers.clone(),
                body: e.body.clone(),
                initiator_url: e.initiator_url.clone(),
            },
        )?;
        count += added as usize;
    }
    Ok((writer.seal()?, count))
}

/// The first HTML document, or the first entry when none is HTML.
fn index_entry(entries: &[HarEntry]) -> Option<&HarEntry> {
    entries
        .iter()
        .find(|e| e.media_type.to_ascii_lowercase().starts_with("text/html"))
        .or_else(|| entries.first())
}
