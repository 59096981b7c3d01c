//! Interactive analysis sessions.
//!
//! A session owns one analyzed snapshot, a closure-consistent selection and
//! two preview servers: the original page replayed as captured, and the
//! simplified page replayed with its block list and rewritten index.
//!
//! Every mutation names the revision it was based on. A stale revision is
//! rejected so that retried or concurrent requests cannot clobber state.
//! When a state directory is configured, each session is written to
//! `<dir>/<session_id>.json` after every accepted mutation:
//!
//! ```json
//! {"sessionId": "...", "snapshotId": "...", "rulesPath": null,
//!  "prefsPath": null, "revision": 3, "selection": {"<elementId>": true}}
//! ```

pub mod http;

use std::collections::{BTreeMap, HashMap};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze_snapshot, AnalysisError, ElementView};
use crate::classify::{ConfigError, Preferences, RuleSet};
use crate::depgraph::{disable_closure, enable_closure, repair_selection, DependencyGraph, GraphError};
use crate::metrics::{diff, resource_metrics, structural_similarity, CardDiff, ReportCard};
use crate::model::{ElementId, ScriptElement, Selection, SnapshotId};
use crate::proxy::serve::{serve_snapshot, ServeError};
use crate::proxy::{ServeMode, ServerHandle, SnapshotStore, StoredSnapshot, StubPolicy};
use crate::rewrite::{simplify, verify_simplification, RewriteError, SimplifiedArtifact, SimplifyOptions};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("stale revision {given}; session is at revision {current}")]
    Conflict { given: u64, current: u64 },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error("simplified page failed verification: {0}")]
    Verify(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("session state {path}: {message}")]
    State { path: PathBuf, message: String },
}

impl SessionError {
    /// Stable machine-readable code for API clients.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::UnknownElement(_) => "unknown_element",
            SessionError::Conflict { .. } => "conflict",
            SessionError::Analysis(AnalysisError::Store(crate::proxy::StoreError::UnknownSnapshot(_))) => {
                "unknown_snapshot"
            }
            SessionError::Analysis(_) => "analysis_failed",
            SessionError::Config(_) => "invalid_config",
            SessionError::Serve(_) => "preview_failed",
            SessionError::Rewrite(_) | SessionError::Verify(_) => "rewrite_failed",
            SessionError::Io { .. } => "io_error",
            SessionError::State { .. } => "state_error",
        }
    }
}

impl From<GraphError> for SessionError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownElement(id) => SessionError::UnknownElement(id),
            other => SessionError::State {
                path: PathBuf::new(),
                message: other.to_string(),
            },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PreviewUrls {
    pub original: String,
    pub simplified: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Edge {
    pub parent: ElementId,
    pub child: ElementId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StateDocument {
    pub session_id: String,
    pub snapshot_id: SnapshotId,
    pub index_url: String,
    pub revision: u64,
    pub applied_revision: u64,
    pub elements: Vec<ElementView>,
    pub groups: Vec<Vec<ElementId>>,
    pub edges: Vec<Edge>,
    pub selection: BTreeMap<ElementId, bool>,
    pub previews: PreviewUrls,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ToggleResult {
    pub revision: u64,
    /// Every element whose state changed, with its new state.
    pub delta: BTreeMap<ElementId, bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ApplyResult {
    pub revision: u64,
    pub previews: PreviewUrls,
    /// False when the previews already reflected this revision.
    pub rebuilt: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SavedArtifacts {
    pub html: PathBuf,
    pub block_report: PathBuf,
    pub metrics_before: PathBuf,
    pub metrics_after: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportDocument {
    pub revision: u64,
    pub before: ReportCard,
    pub after: ReportCard,
    pub reduction: CardDiff,
    pub similarity: f64,
    pub note: &'static str,
}

pub const BYTES_NOTE: &str = "bytes are stored body lengths (decoded), not transfer sizes";

/// `metrics_after.json`: the simplified card plus reductions against the original.
#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct AfterFile<'a> {
    #[serde(flatten)]
    card: &'a ReportCard,
    reduction: CardDiff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct PersistedSession {
    session_id: String,
    snapshot_id: SnapshotId,
    rules_path: Option<PathBuf>,
    prefs_path: Option<PathBuf>,
    revision: u64,
    selection: BTreeMap<ElementId, bool>,
}

pub struct Session {
    id: String,
    snapshot: StoredSnapshot,
    index_bytes: Vec<u8>,
    elements: Vec<ScriptElement>,
    graph: DependencyGraph,
    selection: Selection,
    revision: u64,
    applied_revision: u64,
    warnings: Vec<String>,
    rules_path: Option<PathBuf>,
    prefs_path: Option<PathBuf>,
    original: ServerHandle,
    simplified: ServerHandle,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn elements(&self) -> &[ScriptElement] {
        &self.elements
    }

    pub fn graph(&self) -> &DependencyGraph {
        &self.graph
    }

    pub fn selection(&self) -> &Selection {
        &self.selection
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn snapshot(&self) -> &StoredSnapshot {
        &self.snapshot
    }

    pub fn previews(&self) -> PreviewUrls {
        PreviewUrls {
            original: self.original.index_url(),
            simplified: self.simplified.index_url(),
        }
    }

    pub fn simplified_server(&self) -> &ServerHandle {
        &self.simplified
    }

    pub fn original_server(&self) -> &ServerHandle {
        &self.original
    }

    fn check_revision(&self, given: u64) -> Result<(), SessionError> {
        if given != self.revision {
            return Err(SessionError::Conflict {
                given,
                current: self.revision,
            });
        }
        Ok(())
    }

    /// Rewrites and verifies the index for the current selection.
    pub fn simplified(&self) -> Result<SimplifiedArtifact, SessionError> {
        let index_url = &self.snapshot.snapshot.index_url;
        let artifact = simplify(
            &self.index_bytes,
            index_url,
            &self.elements,
            &self.selection,
            SimplifyOptions::default(),
        )?;
        let v = verify_simplification(&self.index_bytes, index_url, &artifact, &self.elements, &self.selection);
        if !v.passed() {
            return Err(SessionError::Verify(v.problems.join("; ")));
        }
        Ok(artifact)
    }

    pub fn state(&self) -> StateDocument {
        StateDocument {
            session_id: self.id.clone(),
            snapshot_id: self.snapshot.snapshot.snapshot_id.clone(),
            index_url: self.snapshot.snapshot.index_url.to_string(),
            revision: self.revision,
            applied_revision: self.applied_revision,
            elements: self.elements.iter().map(ElementView::from).collect(),
            groups: self.graph.groups(),
            edges: self
                .graph
                .edges()
                .into_iter()
                .map(|(parent, child)| Edge { parent, child })
                .collect(),
            selection: self.selection.as_map().clone(),
            previews: self.previews(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn code(&self, id: &ElementId) -> Result<&[u8], SessionError> {
        self.elements
            .iter()
            .find(|e| &e.id == id)
            .map(ScriptElement::content_bytes)
            .ok_or_else(|| SessionError::UnknownElement(id.clone()))
    }

    pub fn toggle(&mut self, id: &ElementId, enabled: bool, revision: u64) -> Result<ToggleResult, SessionError> {
        self.check_revision(revision)?;
        let next = if enabled {
            enable_closure(&self.graph, &self.selection, id)?
        } else {
            disable_closure(&self.graph, &self.selection, id)?
        };
        let delta = self.selection.delta(&next);
        if !delta.is_empty() {
            self.selection = next;
            self.revision += 1;
        }
        Ok(ToggleResult {
            revision: self.revision,
            delta,
        })
    }

    pub fn apply(&mut self, revision: u64) -> Result<ApplyResult, SessionError> {
        self.check_revision(revision)?;
        let rebuilt = self.applied_revision != self.revision;
        if rebuilt {
            self.install_preview()?;
        }
        Ok(ApplyResult {
            revision: self.revision,
            previews: self.previews(),
            rebuilt,
        })
    }

    fn install_preview(&mut self) -> Result<(), SessionError> {
        let artifact = self.simplified()?;
        let index = self
            .snapshot
            .snapshot
            .index_record()
            .expect("stored snapshots have an index record");
        self.simplified
            .set_override(&index.url, &index.media_type, artifact.html_bytes);
        self.simplified.set_mode(ServeMode::ReplayWithBlocklist {
            blocked: artifact.blocked_urls,
            stub: StubPolicy::EmptyJs,
        });
        self.applied_revision = self.revision;
        Ok(())
    }

    pub fn report(&self) -> Result<ReportDocument, SessionError> {
        let artifact = self.simplified()?;
        let snap = &self.snapshot.snapshot;
        let before = resource_metrics(snap, &Default::default(), &self.index_bytes);
        let after = resource_metrics(snap, &artifact.blocked_urls, &artifact.html_bytes);
        Ok(ReportDocument {
            revision: self.revision,
            before,
            after,
            reduction: diff(&before, &after),
            similarity: structural_similarity(&self.index_bytes, &artifact.html_bytes),
            note: BYTES_NOTE,
        })
    }

    pub fn save(&self, out_dir: &Path) -> Result<SavedArtifacts, SessionError> {
        let artifact = self.simplified()?;
        let report = self.report()?;
        save_artifacts(out_dir, &artifact, &report.before, &report.after)
    }

    fn persisted(&self) -> PersistedSession {
        PersistedSession {
            session_id: self.id.clone(),
            snapshot_id: self.snapshot.snapshot.snapshot_id.clone(),
            rules_path: self.rules_path.clone(),
            prefs_path: self.prefs_path.clone(),
            revision: self.revision,
            selection: self.selection.as_map().clone(),
        }
    }
}

/// Writes `simplified.html`, `block_report.json`, `metrics_before.json` and
/// `metrics_after.json` into `out_dir`.
pub fn save_artifacts(
    out_dir: &Path,
    artifact: &SimplifiedArtifact,
    before: &ReportCard,
    after: &ReportCard,
) -> Result<SavedArtifacts, SessionError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let paths = SavedArtifacts {
        html: out_dir.join("simplified.html"),
        block_report: out_dir.join("block_report.json"),
        metrics_before: out_dir.join("metrics_before.json"),
        metrics_after: out_dir.join("metrics_after.json"),
    };
    let files: [(&PathBuf, Vec<u8>); 4] = [
        (&paths.html, artifact.html_bytes.clone()),
        (&paths.block_report, pretty_json(&artifact.block_report)),
        (&paths.metrics_before, pretty_json(before)),
        (
            &paths.metrics_after,
            pretty_json(&AfterFile {
                card: after,
                reduction: diff(before, after),
            }),
        ),
    ];
    for (path, bytes) in files {
        std::fs::write(path, bytes).map_err(io_err(path))?;
    }
    Ok(paths)
}

fn pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

/// All live sessions over one snapshot store.
pub struct SessionManager {
    store: Arc<SnapshotStore>,
    sessions: RwLock<HashMap<String, Arc<tokio::sync::RwLock<Session>>>>,
    state_dir: Option<PathBuf>,
    preview_ip: IpAddr,
}

impl SessionManager {
    pub fn new(store: Arc<SnapshotStore>) -> Self {
        SessionManager {
            store,
            sessions: RwLock::default(),
            state_dir: None,
            preview_ip: IpAddr::V4(Ipv4Addr::LOCALHOST),
        }
    }

    /// Persists sessions under `dir` after every accepted mutation.
    pub fn with_state_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.state_dir = Some(dir.into());
        self
    }

    pub fn store(&self) -> &SnapshotStore {
        &self.store
    }

    fn load_config(
        rules_path: Option<&Path>,
        prefs_path: Option<&Path>,
    ) -> Result<(RuleSet, Preferences), SessionError> {
        let rules = match rules_path {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::default(),
        };
        let prefs = match prefs_path {
            Some(p) => Preferences::load(p)?,
            None => Preferences::default(),
        };
        Ok((rules, prefs))
    }

    async fn start(
        &self,
        session_id: String,
        snapshot_id: &SnapshotId,
        rules_path: Option<PathBuf>,
        prefs_path: Option<PathBuf>,
    ) -> Result<Session, SessionError> {
        let (rules, prefs) = Self::load_config(rules_path.as_deref(), prefs_path.as_deref())?;
        let (snapshot, analysis) = analyze_snapshot(&self.store, snapshot_id, &rules, &prefs)?;
        let index_bytes = snapshot
            .index_bytes()
            .map_err(|e| SessionError::Analysis(AnalysisError::Index(e)))?;
        let bind = SocketAddr::new(self.preview_ip, 0);
        let original = serve_snapshot(snapshot.clone(), ServeMode::Replay, bind).await?;
        let simplified = serve_snapshot(snapshot.clone(), ServeMode::Replay, bind).await?;
        let mut session = Session {
            id: session_id,
            snapshot,
            index_bytes,
            elements: analysis.elements,
            graph: analysis.graph,
            selection: analysis.selection,
            revision: 1,
            applied_revision: 0,
            warnings: analysis.warnings,
            rules_path,
            prefs_path,
            original,
            simplified,
        };
        session.install_preview()?;
        Ok(session)
    }

    fn insert(&self, session: Session) -> Arc<tokio::sync::RwLock<Session>> {
        let id = session.id.clone();
        let entry = Arc::new(tokio::sync::RwLock::new(session));
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, entry.clone());
        entry
    }

    pub async fn create(
        &self,
        snapshot_id: &SnapshotId,
        rules_path: Option<PathBuf>,
        prefs_path: Option<PathBuf>,
    ) -> Result<StateDocument, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string()[..12].to_owned();
        let session = self.start(id, snapshot_id, rules_path, prefs_path).await?;
        self.persist(&session)?;
        let state = session.state();
        self.insert(session);
        Ok(state)
    }

    pub fn get(&self, id: &str) -> Result<Arc<tokio::sync::RwLock<Session>>, SessionError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_owned()))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    pub async fn state(&self, id: &str) -> Result<StateDocument, SessionError> {
        Ok(self.get(id)?.read().await.state())
    }

    pub async fn code(&self, id: &str, element: &ElementId) -> Result<Vec<u8>, SessionError> {
        Ok(self.get(id)?.read().await.code(element)?.to_vec())
    }

    pub async fn toggle(
        &self,
        id: &str,
        element: &ElementId,
        enabled: bool,
        revision: u64,
    ) -> Result<ToggleResult, SessionError> {
        let entry = self.get(id)?;
        let mut session = entry.write().await;
        let before = session.revision;
        let result = session.toggle(element, enabled, revision)?;
        if session.revision != before {
            self.persist(&session)?;
        }
        Ok(result)
    }

    pub async fn apply(&self, id: &str, revision: u64) -> Result<ApplyResult, SessionError> {
        self.get(id)?.write().await.apply(revision)
    }

    pub async fn save(&self, id: &str, out_dir: &Path) -> Result<SavedArtifacts, SessionError> {
        self.get(id)?.read().await.save(out_dir)
    }

    pub async fn report(&self, id: &str) -> Result<ReportDocument, SessionError> {
        self.get(id)?.read().await.report()
    }

    fn persist(&self, session: &Session) -> Result<(), SessionError> {
        let Some(dir) = &self.state_dir else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(format!("{}.json", session.id));
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec_pretty(&session.persisted()).expect("serializable");
        std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Restarts every session saved in the state directory. Returns the
    /// resumed session ids.
    pub async fn resume(&self) -> Result<Vec<String>, SessionError> {
        let Some(dir) = self.state_dir.clone() else { return Ok(Vec::new()) };
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut resumed = Vec::new();
        for path in paths {
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            let saved: PersistedSession = serde_json::from_slice(&bytes).map_err(|e| SessionError::State {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let mut session = self
                .start(
                    saved.session_id.clone(),
                    &saved.snapshot_id,
                    saved.rules_path.clone(),
                    saved.prefs_path.clone(),
                )
                .await?;
            let (selection, repaired) = repair_selection(&session.graph, &session.elements, &saved.selection)?;
            if !repaired.is_empty() {
                tracing::warn!(session = %saved.session_id, ?repaired, "saved selection needed closure repair");
            }
            session.selection = selection;
            session.revision = saved.revision;
            session.install_preview()?;
            resumed.push(saved.session_id);
            self.insert(session);
        }
        Ok(resumed)
    }
}
