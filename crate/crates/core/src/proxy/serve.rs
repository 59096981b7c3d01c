//! Offline HTTP replay of a stored snapshot.
//!
//! Recorded URLs are addressed as `/s/{snapshot_id}/{percent-encoded-url}`.
//! HTML served under `/s/` has its `src`, `href`, `poster` and `srcset`
//! references rewritten into the same scheme so a browser stays inside the
//! snapshot. `/raw/` serves identical lookups without any rewriting.
//! Nothing is ever fetched upstream.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, HeaderName, HeaderValue, Response, StatusCode, Uri};
use axum::Router;
use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::extract::is_javascript;
use crate::html::{self, Tag, Token};
use crate::model::{normalize_url, ByteRange, CanonicalUrl, SnapshotId};

use super::store::{SnapshotStore, StoreError, StoredSnapshot};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("binding {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Response for a blocked URL.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum StubPolicy {
    /// 200 with an empty JavaScript body for scripts, 204 for anything else.
    #[default]
    EmptyJs,
    /// 403 with an empty body.
    Forbidden,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum ServeMode {
    #[default]
    Replay,
    ReplayWithBlocklist {
        blocked: BTreeSet<CanonicalUrl>,
        stub: StubPolicy,
    },
}

impl ServeMode {
    pub fn blocks(&self, url: &CanonicalUrl) -> Option<StubPolicy> {
        match self {
            ServeMode::Replay => None,
            ServeMode::ReplayWithBlocklist { blocked, stub } => blocked.contains(url).then_some(*stub),
        }
    }
}

/// What a stub response looks like: status, content type, body.
pub fn stub_response(policy: StubPolicy, media_type: &str, url: &CanonicalUrl) -> (u16, Option<&'static str>) {
    match policy {
        StubPolicy::Forbidden => (403, None),
        StubPolicy::EmptyJs if is_javascript(media_type, url) => (200, Some("application/javascript")),
        StubPolicy::EmptyJs => (204, None),
    }
}

/// Path-segment encoding: everything but unreserved characters.
const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub fn encode_path(id: &SnapshotId, url: &CanonicalUrl) -> String {
    format!("/s/{id}/{}", utf8_percent_encode(url.as_str(), SEGMENT))
}

#[derive(Debug, Default)]
pub struct ServeStats {
    pub requests: AtomicU64,
    pub hits: AtomicU64,
    pub misses: AtomicU64,
    pub stubbed: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatsSnapshot {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub stubbed: u64,
}

#[derive(Debug, Clone)]
struct Override {
    media_type: String,
    body: Arc<[u8]>,
}

struct Shared {
    snapshot: StoredSnapshot,
    by_url: HashMap<CanonicalUrl, usize>,
    mode: RwLock<Arc<ServeMode>>,
    overrides: RwLock<Arc<HashMap<CanonicalUrl, Override>>>,
    stats: ServeStats,
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl std::fmt::Debug for ServerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerHandle").field("addr", &self.addr).finish()
    }
}

/// Opens `id` from the store and serves it.
pub async fn serve(
    store: &SnapshotStore,
    id: &SnapshotId,
    mode: ServeMode,
    addr: SocketAddr,
) -> Result<ServerHandle, ServeError> {
    let snapshot = store.open_snapshot(id)?;
    serve_snapshot(snapshot, mode, addr).await
}

pub async fn serve_snapshot(
    snapshot: StoredSnapshot,
    mode: ServeMode,
    addr: SocketAddr,
) -> Result<ServerHandle, ServeError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    let addr = listener
        .local_addr()
        .map_err(|source| ServeError::Bind { addr, source })?;
    let by_url = snapshot
        .snapshot
        .resources
        .iter()
        .enumerate()
        .map(|(i, r)| (r.url.clone(), i))
        .collect();
    let shared = Arc::new(Shared {
        snapshot,
        by_url,
        mode: RwLock::new(Arc::new(mode)),
        overrides: RwLock::default(),
        stats: ServeStats::default(),
    });
    let app = Router::new().fallback(handle).with_state(shared.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let shutdown = async {
            let _ = rx.await;
        };
        if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
            tracing::error!("replay server stopped: {e}");
        }
    });
    Ok(ServerHandle {
        addr,
        shared,
        shutdown: Some(tx),
        task: Some(task),
    })
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn snapshot_id(&self) -> &SnapshotId {
        &self.shared.snapshot.snapshot.snapshot_id
    }

    /// Absolute URL under which `url` is served, with link rewriting.
    pub fn url_for(&self, url: &CanonicalUrl) -> String {
        format!("http://{}{}", self.addr, encode_path(self.snapshot_id(), url))
    }

    /// Like `url_for`, but the body is served verbatim.
    pub fn raw_url_for(&self, url: &CanonicalUrl) -> String {
        let path = encode_path(self.snapshot_id(), url);
        format!("http://{}/raw{}", self.addr, &path[2..])
    }

    pub fn index_url(&self) -> String {
        self.url_for(&self.shared.snapshot.snapshot.index_url)
    }

    pub fn mode(&self) -> Arc<ServeMode> {
        self.shared.mode.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Replaces the mode; requests that start afterwards see the new one.
    pub fn set_mode(&self, mode: ServeMode) {
        *self.shared.mode.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(mode);
    }

    /// Serves `body` for `url` instead of the recorded response.
    pub fn set_override(&self, url: &CanonicalUrl, media_type: &str, body: Vec<u8>) {
        let mut guard = self.shared.overrides.write().unwrap_or_else(|p| p.into_inner());
        let mut next = HashMap::clone(&guard);
        next.insert(
            url.clone(),
            Override {
                media_type: media_type.to_owned(),
                body: body.into(),
            },
        );
        *guard = Arc::new(next);
    }

    pub fn stats(&self) -> StatsSnapshot {
        let s = &self.shared.stats;
        StatsSnapshot {
            requests: s.requests.load(Ordering::Relaxed),
            hits: s.hits.load(Ordering::Relaxed),
            misses: s.misses.load(Ordering::Relaxed),
            stubbed: s.stubbed.load(Ordering::Relaxed),
        }
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Splits `/s/{id}/{encoded}` or `/raw/{id}/{encoded}`.
fn parse_target(uri: &Uri) -> Option<(bool, &str, Result<CanonicalUrl, ()>)> {
    let path = uri.path();
    let (rewrite, rest) = if let Some(r) = path.strip_prefix("/s/") {
        (true, r)
    } else {
        (false, path.strip_prefix("/raw/")?)
    };
    let (id, encoded) = rest.split_once('/')?;
    let mut decoded = match percent_decode_str(encoded).decode_utf8() {
        Ok(d) => d.into_owned(),
        Err(_) => return Some((rewrite, id, Err(()))),
    };
    if let Some(q) = uri.query() {
        decoded.push('?');
        decoded.push_str(q);
    }
    Some((rewrite, id, normalize_url(&decoded, None).map_err(|_| ())))
}

fn empty(status: StatusCode) -> Response<Body> {
    let mut r = Response::new(Body::empty());
    *r.status_mut() = status;
    r
}

const DROPPED_HEADERS: &[&str] = &[
    "content-encoding",
    "transfer-encoding",
    "content-length",
    "connection",
    "keep-alive",
    "content-security-policy",
    "strict-transport-security",
    "alt-svc",
];

async fn handle(State(s): State<Arc<Shared>>, uri: Uri) -> Response<Body> {
    s.stats.requests.fetch_add(1, Ordering::Relaxed);
    let snap = &s.snapshot.snapshot;
    if uri.path() == "/" {
        let mut r = empty(StatusCode::FOUND);
        let loc = encode_path(&snap.snapshot_id, &snap.index_url);
        r.headers_mut()
            .insert(header::LOCATION, HeaderValue::from_str(&loc).expect("encoded path is ascii"));
        return r;
    }
    let Some((rewrite, id, url)) = parse_target(&uri) else {
        s.stats.misses.fetch_add(1, Ordering::Relaxed);
        return empty(StatusCode::NOT_FOUND);
    };
    if id != snap.snapshot_id.as_str() {
        s.stats.misses.fetch_add(1, Ordering::Relaxed);
        return empty(StatusCode::NOT_FOUND);
    }
    let Ok(url) = url else {
        return empty(StatusCode::BAD_REQUEST);
    };
    let record = s.by_url.get(&url).map(|&i| &snap.resources[i]);

    let mode = s.mode.read().unwrap_or_else(|p| p.into_inner()).clone();
    if let Some(policy) = mode.blocks(&url) {
        s.stats.stubbed.fetch_add(1, Ordering::Relaxed);
        let media = record.map_or("", |r| r.media_type.as_str());
        let (status, content_type) = stub_response(policy, media, &url);
        let mut r = empty(StatusCode::from_u16(status).expect("valid stub status"));
        if let Some(ct) = content_type {
            r.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(ct));
        }
        return r;
    }

    let over = s.overrides.read().unwrap_or_else(|p| p.into_inner()).get(&url).cloned();
    if let Some(o) = over {
        s.stats.hits.fetch_add(1, Ordering::Relaxed);
        let body = maybe_rewrite(rewrite, &o.media_type, &url, &snap.snapshot_id, &o.body);
        let mut r = Response::new(Body::from(body));
        if let Ok(v) = HeaderValue::from_str(&o.media_type) {
            r.headers_mut().insert(header::CONTENT_TYPE, v);
        }
        return r;
    }

    let Some(record) = record else {
        s.stats.misses.fetch_add(1, Ordering::Relaxed);
        return empty(StatusCode::NOT_FOUND);
    };
    s.stats.hits.fetch_add(1, Ordering::Relaxed);
    if record.status == 0 {
        // The original request never got a response.
        return empty(StatusCode::BAD_GATEWAY);
    }
    let body = match s.snapshot.read_body(record) {
        Ok(b) => b,
        Err(e) => {
            tracing::error!(url = %url, "reading stored body: {e}");
            return empty(StatusCode::INTERNAL_SERVER_ERROR);
        }
    };
    let body = maybe_rewrite(rewrite, &record.media_type, &url, &snap.snapshot_id, &body);
    let mut r = Response::new(Body::from(body));
    *r.status_mut() = StatusCode::from_u16(record.status).unwrap_or(StatusCode::OK);
    let headers = r.headers_mut();
    for (k, v) in &record.headers {
        let lower = k.to_ascii_lowercase();
        if DROPPED_HEADERS.contains(&lower.as_str()) {
            continue;
        }
        if let (Ok(k), Ok(v)) = (HeaderName::from_bytes(lower.as_bytes()), HeaderValue::from_str(v)) {
            headers.append(k, v);
        }
    }
    if !headers.contains_key(header::CONTENT_TYPE) && !record.media_type.is_empty() {
        if let Ok(v) = HeaderValue::from_str(&record.media_type) {
            headers.insert(header::CONTENT_TYPE, v);
        }
    }
    r
}

fn maybe_rewrite(rewrite: bool, media_type: &str, url: &CanonicalUrl, id: &SnapshotId, body: &[u8]) -> Vec<u8> {
    if rewrite && media_type.to_ascii_lowercase().starts_with("text/html") {
        rewrite_html_links(body, url, id)
    } else {
        body.to_vec()
    }
}

const LINK_ATTRS: &[&str] = &["src", "href", "poster"];

/// Maps every `src`, `href`, `poster` and `srcset` reference to its
/// `/s/{id}/...` path. Other bytes are untouched.
pub fn rewrite_html_links(body: &[u8], page: &CanonicalUrl, id: &SnapshotId) -> Vec<u8> {
    let mut base = page.clone();
    let mut seen_base = false;
    let mut edits: Vec<(ByteRange, String)> = Vec::new();
    let route = |base: &CanonicalUrl, raw: &str| -> Option<String> {
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            return None;
        }
        let u = base.join(raw).ok()?;
        matches!(u.as_str().split(':').next(), Some("http" | "https")).then(|| encode_path(id, &u))
    };
    let mut visit = |tag: &Tag, base: &mut CanonicalUrl| {
        if tag.name == "base" && !seen_base {
            if let Some(b) = tag.attr_value("href").and_then(|h| base.join(h).ok()) {
                *base = b;
                seen_base = true;
            }
        }
        for a in &tag.attrs {
            let Some(range) = a.value_range else { continue };
            if LINK_ATTRS.contains(&a.name.as_str()) {
                if let Some(new) = route(base, &a.value) {
                    edits.push((range, new));
                }
            } else if a.name == "srcset" {
                let parts: Vec<String> = a
                    .value
                    .split(',')
                    .map(|cand| {
                        let mut words = cand.split_whitespace();
                        let Some(u) = words.next() else { return String::new() };
                        let mapped = route(base, u).unwrap_or_else(|| u.to_owned());
                        std::iter::once(mapped).chain(words.map(str::to_owned)).collect::<Vec<_>>().join(" ")
                    })
                    .collect();
                edits.push((range, parts.join(", ")));
            }
        }
    };
    for token in html::tokenize(body).tokens {
        match token {
            Token::StartTag(tag) => visit(&tag, &mut base),
            Token::Raw(raw) => visit(&raw.open, &mut base),
            _ => {}
        }
    }
    let mut out = Vec::with_capacity(body.len() + edits.len() * 32);
    let mut at = 0;
    for (range, new) in edits {
        out.extend_from_slice(&body[at..range.start]);
        out.extend_from_slice(new.as_bytes());
        at = range.end;
    }
    out.extend_from_slice(&body[at..]);
    out
}
