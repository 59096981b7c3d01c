//! On-disk snapshot store.
//!
//! ```text
//! <root>/manifest.sqlite        snapshot and resource tables
//! <root>/bodies/<id>/<n>.body   response bodies, decoded
//! <root>/logs/<id>.jsonl        network log written at seal time
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rusqlite::{params, Connection, OptionalExtension};
use thiserror::Error;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::extract::{BodySource, NetworkLog};
use crate::model::{CanonicalUrl, ResourceRecord, Snapshot, SnapshotId};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("snapshot store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest database: {0}")]
    Db(#[from] rusqlite::Error),
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(SnapshotId),
    #[error("snapshot {0} is sealed")]
    Sealed(SnapshotId),
    #[error("snapshot {0} has no record for its index url")]
    MissingIndex(SnapshotId),
    #[error("corrupt manifest entry for {url}: {message}")]
    Corrupt { url: String, message: String },
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS snapshots (
    snapshot_id TEXT PRIMARY KEY,
    index_url   TEXT NOT NULL,
    captured_at TEXT NOT NULL,
    sealed      INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS resources (
    url           TEXT NOT NULL,
    snapshot_id   TEXT NOT NULL,
    status        INTEGER NOT NULL,
    media_type    TEXT NOT NULL,
    headers       BLOB NOT NULL,
    body_path     TEXT NOT NULL,
    body_length   INTEGER NOT NULL,
    initiator_url TEXT NULL,
    PRIMARY KEY (url, snapshot_id)
);
CREATE INDEX IF NOT EXISTS resources_by_url ON resources (url);
";

pub struct SnapshotStore {
    root: PathBuf,
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for SnapshotStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SnapshotStore").field("root", &self.root).finish()
    }
}

impl SnapshotStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("bodies"))?;
        fs::create_dir_all(root.join("logs"))?;
        let conn = Connection::open(root.join("manifest.sqlite"))?;
        conn.execute_batch(SCHEMA)?;
        Ok(SnapshotStore {
            root,
            conn: Mutex::new(conn),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Starts a new snapshot. Only the returned writer may add records.
    pub fn begin(&self, index_url: &CanonicalUrl) -> Result<SnapshotWriter<'_>, StoreError> {
        let id = SnapshotId::generate();
        let captured_at = OffsetDateTime::now_utc();
        self.conn().execute(
            "INSERT INTO snapshots (snapshot_id, index_url, captured_at, sealed) VALUES (?1, ?2, ?3, 0)",
            params![
                id.as_str(),
                index_url.as_str(),
                captured_at.format(&Rfc3339).expect("rfc3339 formats")
            ],
        )?;
        fs::create_dir_all(self.root.join("bodies").join(id.as_str()))?;
        Ok(SnapshotWriter {
            store: self,
            id,
            index_url: index_url.clone(),
            next: 0,
        })
    }

    pub fn list(&self) -> Result<Vec<(SnapshotId, CanonicalUrl, bool)>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT snapshot_id, index_url, sealed FROM snapshots ORDER BY captured_at, snapshot_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, i64>(2)?))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (id, url, sealed) = row?;
            out.push((SnapshotId::new(id), parse_url(&url)?, sealed != 0));
        }
        Ok(out)
    }

    pub fn is_sealed(&self, id: &SnapshotId) -> Result<bool, StoreError> {
        let sealed: Option<i64> = self
            .conn()
            .query_row(
                "SELECT sealed FROM snapshots WHERE snapshot_id = ?1",
                [id.as_str()],
                |r| r.get(0),
            )
            .optional()?;
        sealed
            .map(|s| s != 0)
            .ok_or_else(|| StoreError::UnknownSnapshot(id.clone()))
    }

    /// Loads the manifest of a snapshot, records in capture order.
    pub fn load(&self, id: &SnapshotId) -> Result<Snapshot, StoreError> {
        let conn = self.conn();
        let head: Option<(String, String)> = conn
            .query_row(
                "SELECT index_url, captured_at FROM snapshots WHERE snapshot_id = ?1",
                [id.as_str()],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()?;
        let (index_url, captured_at) = head.ok_or_else(|| StoreError::UnknownSnapshot(id.clone()))?;
        let mut stmt = conn.prepare(
            "SELECT url, status, media_type, headers, body_path, body_length, initiator_url
             FROM resources WHERE snapshot_id = ?1 ORDER BY rowid",
        )?;
        let rows = stmt.query_map([id.as_str()], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, i64>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, Vec<u8>>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, i64>(5)?,
                r.get::<_, Option<String>>(6)?,
            ))
        })?;
        let mut resources = Vec::new();
        for row in rows {
            let (url, status, media_type, headers, body_path, body_length, initiator) = row?;
            let headers: Vec<(String, String)> =
                serde_json::from_slice(&headers).map_err(|e| StoreError::Corrupt {
                    url: url.clone(),
                    message: e.to_string(),
                })?;
            resources.push(ResourceRecord {
                url: parse_url(&url)?,
                status: status as u16,
                media_type,
                headers,
                body_path,
                body_length: body_length as u64,
                initiator_url: initiator.as_deref().map(parse_url).transpose()?,
            });
        }
        let captured_at = OffsetDateTime::parse(&captured_at, &Rfc3339).map_err(|e| StoreError::Corrupt {
            url: index_url.clone(),
            message: e.to_string(),
        })?;
        Ok(Snapshot {
            snapshot_id: id.clone(),
            index_url: parse_url(&index_url)?,
            resources,
            captured_at,
        })
    }

    /// Opens a sealed snapshot for reading bodies.
    pub fn open_snapshot(&self, id: &SnapshotId) -> Result<StoredSnapshot, StoreError> {
        let snapshot = self.load(id)?;
        if snapshot.index_record().is_none() {
            return Err(StoreError::MissingIndex(id.clone()));
        }
        Ok(StoredSnapshot {
            snapshot,
            root: self.root.clone(),
        })
    }

    pub fn read_log(&self, id: &SnapshotId) -> Result<Option<NetworkLog>, StoreError> {
        let path = self.log_path(id);
        if !path.exists() {
            return Ok(None);
        }
        let file = std::io::BufReader::new(fs::File::open(path)?);
        NetworkLog::read_jsonl(file)
            .map(Some)
            .map_err(|e| StoreError::Corrupt {
                url: id.to_string(),
                message: e.to_string(),
            })
    }

    pub fn log_path(&self, id: &SnapshotId) -> PathBuf {
        self.root.join("logs").join(format!("{id}.jsonl"))
    }
}

fn parse_url(s: &str) -> Result<CanonicalUrl, StoreError> {
    CanonicalUrl::parse(s).map_err(|e| StoreError::Corrupt {
        url: s.to_owned(),
        message: e.to_string(),
    })
}

/// Exclusive writer for one snapshot being captured.
pub struct SnapshotWriter<'a> {
    store: &'a SnapshotStore,
    id: SnapshotId,
    index_url: CanonicalUrl,
    next: usize,
}

/// Response data for one recorded request.
#[derive(Debug, Clone, Default)]
pub struct Recorded {
    pub status: u16,
    pub media_type: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub initiator_url: Option<CanonicalUrl>,
}

impl SnapshotWriter<'_> {
    pub fn id(&self) -> &SnapshotId {
        &self.id
    }

    pub fn index_url(&self) -> &CanonicalUrl {
        &self.index_url
    }

    /// Records a response; returns false when the URL is already recorded.
    pub fn add(&mut self, url: &CanonicalUrl, rec: Recorded) -> Result<bool, StoreError> {
        let exists: Option<i64> = self
            .store
            .conn()
            .query_row(
                "SELECT 1 FROM resources WHERE url = ?1 AND snapshot_id = ?2",
                params![url.as_str(), self.id.as_str()],
                |r| r.get(0),
            )
            .optional()?;
        if exists.is_some() {
            return Ok(false);
        }
        let body_path = format!("bodies/{}/{:05}.body", self.id, self.next);
        self.next += 1;
        fs::write(self.store.root.join(&body_path), &rec.body)?;
        let headers = serde_json::to_vec(&rec.headers).expect("headers serialize");
        self.store.conn().execute(
            "INSERT INTO resources (url, snapshot_id, status, media_type, headers, body_path, body_length, initiator_url)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            params![
                url.as_str(),
                self.id.as_str(),
                rec.status as i64,
                rec.media_type,
                headers,
                body_path,
                rec.body.len() as i64,
                rec.initiator_url.as_ref().map(|u| u.as_str().to_owned()),
            ],
        )?;
        Ok(true)
    }

    /// Writes the network log and marks the snapshot immutable.
    pub fn seal(self) -> Result<SnapshotId, StoreError> {
        let snapshot = self.store.load(&self.id)?;
        if snapshot.index_record().is_none() {
            return Err(StoreError::MissingIndex(self.id.clone()));
        }
        let log = NetworkLog::from_snapshot(&snapshot);
        let mut out = Vec::new();
        log.write_jsonl(&mut out)?;
        fs::write(self.store.log_path(&self.id), out)?;
        self.store.conn().execute(
            "UPDATE snapshots SET sealed = 1 WHERE snapshot_id = ?1",
            [self.id.as_str()],
        )?;
        Ok(self.id)
    }
}

/// A loaded snapshot manifest plus access to its body files.
#[derive(Debug, Clone)]
pub struct StoredSnapshot {
    pub snapshot: Snapshot,
    root: PathBuf,
}

impl StoredSnapshot {
    pub fn read_body(&self, record: &ResourceRecord) -> std::io::Result<Vec<u8>> {
        fs::read(self.root.join(&record.body_path))
    }

    pub fn body_path(&self, record: &ResourceRecord) -> PathBuf {
        self.root.join(&record.body_path)
    }

    pub fn index_bytes(&self) -> std::io::Result<Vec<u8>> {
        let record = self
            .snapshot
            .index_record()
            .expect("open_snapshot checked the index record");
        self.read_body(record)
    }

    /// Every body file exists with its recorded length.
    pub fn verify_bodies(&self) -> Result<(), StoreError> {
        for r in &self.snapshot.resources {
            let len = fs::metadata(self.body_path(r))?.len();
            if len != r.body_length {
                return Err(StoreError::Corrupt {
                    url: r.url.to_string(),
                    message: format!("body is {len} bytes, manifest says {}", r.body_length),
                });
            }
        }
        Ok(())
    }
}

impl BodySource for StoredSnapshot {
    fn body(&self, url: &CanonicalUrl) -> Option<Vec<u8>> {
        let record = self.snapshot.record(url)?;
        if record.status == 0 {
            return None;
        }
        self.read_body(record).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_seal_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        let index = CanonicalUrl::parse("https://e.com/").unwrap();
        let a = CanonicalUrl::parse("https://e.com/a.js").unwrap();
        let mut w = store.begin(&index).unwrap();
        assert!(w
            .add(&index, Recorded { status: 200, media_type: "text/html".into(), body: b"<p>".to_vec(), ..Default::default() })
            .unwrap());
        assert!(w
            .add(&a, Recorded { status: 200, media_type: "text/javascript".into(), body: b"a()".to_vec(), initiator_url: Some(index.clone()), headers: vec![("x".into(), "y".into())] })
            .unwrap());
        assert!(!w.add(&a, Recorded::default()).unwrap());
        let id = w.seal().unwrap();
        assert!(store.is_sealed(&id).unwrap());

        let snap = store.open_snapshot(&id).unwrap();
        assert_eq!(snap.snapshot.resources.len(), 2);
        assert_eq!(snap.snapshot.resources[1].headers, vec![("x".to_owned(), "y".to_owned())]);
        assert_eq!(snap.body(&a).unwrap(), b"a()");
        assert_eq!(snap.index_bytes().unwrap(), b"<p>");
        snap.verify_bodies().unwrap();
        let log = store.read_log(&id).unwrap().unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(store.list().unwrap().len(), 1);

        let reopened = SnapshotStore::open(dir.path()).unwrap();
        assert_eq!(reopened.load(&id).unwrap(), snap.snapshot);
    }

    #[test]
    fn unknown_and_missing_index() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        assert!(matches!(store.load(&SnapshotId::new("nope")), Err(StoreError::UnknownSnapshot(_))));
        let w = store.begin(&CanonicalUrl::parse("https://e.com/").unwrap()).unwrap();
        assert!(matches!(w.seal(), Err(StoreError::MissingIndex(_))));
    }

    #[test]
    fn detects_truncated_body() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        let index = CanonicalUrl::parse("https://e.com/").unwrap();
        let mut w = store.begin(&index).unwrap();
        w.add(&index, Recorded { status: 200, body: b"hello".to_vec(), ..Default::default() }).unwrap();
        let id = w.seal().unwrap();
        let snap = store.open_snapshot(&id).unwrap();
        fs::write(snap.body_path(&snap.snapshot.resources[0]), b"he").unwrap();
        assert!(matches!(snap.verify_bodies(), Err(StoreError::Corrupt { .. })));
    }
}
