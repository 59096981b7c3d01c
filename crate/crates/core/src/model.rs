//! Shared domain types: script elements, selections, snapshots and the
//! canonical URL form every other module keys on.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use time::OffsetDateTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UrlError {
    #[error("cannot parse url {raw:?}: {reason}")]
    Parse { raw: String, reason: String },
    #[error("relative url {0:?} needs a base url")]
    MissingBase(String),
}

/// A URL in canonical form: lowercase scheme and host, no default port, no
/// fragment, query and path escapes kept as given.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalUrl(String);

impl CanonicalUrl {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn parse(raw: &str) -> Result<Self, UrlError> {
        normalize_url(raw, None)
    }

    pub fn join(&self, reference: &str) -> Result<Self, UrlError> {
        normalize_url(reference, Some(self))
    }

    pub fn host(&self) -> Option<String> {
        url::Url::parse(&self.0)
            .ok()
            .and_then(|u| u.host_str().map(str::to_owned))
    }

    /// Path component only, without query.
    pub fn path(&self) -> String {
        url::Url::parse(&self.0)
            .map(|u| u.path().to_owned())
            .unwrap_or_default()
    }

    /// Last non-empty path segment, used as a display name.
    pub fn file_name(&self) -> String {
        let path = self.path();
        path.rsplit('/')
            .find(|s| !s.is_empty())
            .unwrap_or(self.as_str())
            .to_owned()
    }
}

impl fmt::Display for CanonicalUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CanonicalUrl {
    type Err = UrlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        normalize_url(s, None)
    }
}

/// Canonicalize `raw`, resolving it against `base` when it is relative.
pub fn normalize_url(raw: &str, base: Option<&CanonicalUrl>) -> Result<CanonicalUrl, UrlError> {
    let parsed = match url::Url::parse(raw) {
        Ok(u) => u,
        Err(url::ParseError::RelativeUrlWithoutBase) => match base {
            Some(base) => {
                let base = url::Url::parse(base.as_str()).map_err(|e| UrlError::Parse {
                    raw: base.as_str().to_owned(),
                    reason: e.to_string(),
                })?;
                base.join(raw).map_err(|e| UrlError::Parse {
                    raw: raw.to_owned(),
                    reason: e.to_string(),
                })?
            }
            None => return Err(UrlError::MissingBase(raw.to_owned())),
        },
        Err(e) => {
            return Err(UrlError::Parse {
                raw: raw.to_owned(),
                reason: e.to_string(),
            })
        }
    };
    let mut parsed = parsed;
    parsed.set_fragment(None);
    Ok(CanonicalUrl(parsed.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScriptKind {
    Inline,
    External,
    Recursive,
}

impl fmt::Display for ScriptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScriptKind::Inline => "inline",
            ScriptKind::External => "external",
            ScriptKind::Recursive => "recursive",
        })
    }
}

/// Half-open byte span `[start, end)` within a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ByteRange {
    pub start: usize,
    pub end: usize,
}

impl ByteRange {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        ByteRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &ByteRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn slice<'a>(&self, bytes: &'a [u8]) -> &'a [u8] {
        &bytes[self.start..self.end]
    }
}

/// Hex SHA-256 of script bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentHash(String);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Content-addressed element identifier: stable across re-analysis of the
/// same input.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(String);

impl ElementId {
    pub fn derive(
        kind: ScriptKind,
        hash: &ContentHash,
        range: Option<ByteRange>,
        src: Option<&CanonicalUrl>,
    ) -> Self {
        let mut h = Sha256::new();
        h.update(kind.to_string().as_bytes());
        h.update([0]);
        h.update(hash.as_str().as_bytes());
        h.update([0]);
        if let Some(r) = range {
            h.update(format!("{}:{}", r.start, r.end).as_bytes());
        }
        h.update([0]);
        if let Some(src) = src {
            h.update(src.as_str().as_bytes());
        }
        let digest = h.finalize();
        ElementId(hex::encode(&digest[..8]))
    }

    pub fn new(raw: impl Into<String>) -> Self {
        ElementId(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Advertising,
    Analytics,
    Social,
    Video,
    Utilities,
    Hosting,
    Marketing,
    CustomerSuccess,
    Content,
    #[serde(rename = "CDN")]
    Cdn,
    TagManagement,
    Unknown,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::Advertising,
        Category::Analytics,
        Category::Social,
        Category::Video,
        Category::Utilities,
        Category::Hosting,
        Category::Marketing,
        Category::CustomerSuccess,
        Category::Content,
        Category::Cdn,
        Category::TagManagement,
        Category::Unknown,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Category::Advertising => "Advertising",
            Category::Analytics => "Analytics",
            Category::Social => "Social",
            Category::Video => "Video",
            Category::Utilities => "Utilities",
            Category::Hosting => "Hosting",
            Category::Marketing => "Marketing",
            Category::CustomerSuccess => "CustomerSuccess",
            Category::Content => "Content",
            Category::Cdn => "CDN",
            Category::TagManagement => "TagManagement",
            Category::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown category {0:?}")]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    /// Case-insensitive; spaces, dashes and underscores are ignored so
    /// "Customer Success" and "tag_management" both parse.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '-' | '_'))
            .flat_map(char::to_lowercase)
            .collect();
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.name().to_ascii_lowercase() == folded)
            .ok_or_else(|| UnknownCategory(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    Critical,
    NonCritical,
}

impl fmt::Display for Criticality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criticality::Critical => "critical",
            Criticality::NonCritical => "noncritical",
        })
    }
}

/// Where a script element was fetched from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parent {
    /// The index document itself; not an edge in the dependency graph.
    Document,
    Element(ElementId),
    /// The recorded initiator matched nothing in the inventory.
    Unresolved(CanonicalUrl),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptElement {
    pub id: ElementId,
    pub kind: ScriptKind,
    pub src: Option<CanonicalUrl>,
    pub doc_range: Option<ByteRange>,
    pub content_hash: ContentHash,
    pub byte_size: u64,
    pub category: Category,
    pub confidence: f64,
    pub criticality: Criticality,
    pub parents: Vec<Parent>,
    /// Set when the network log names the script but no body was captured.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub body_missing: bool,
    #[serde(skip)]
    pub content: Option<Arc<[u8]>>,
}

impl ScriptElement {
    pub fn content_bytes(&self) -> &[u8] {
        self.content.as_deref().unwrap_or(&[])
    }

    pub fn parent_ids(&self) -> impl Iterator<Item = &ElementId> {
        self.parents.iter().filter_map(|p| match p {
            Parent::Element(id) => Some(id),
            _ => None,
        })
    }

    /// Short human label: file name for fetched scripts, `inline@offset` otherwise.
    pub fn label(&self) -> String {
        match (&self.src, self.doc_range) {
            (Some(src), _) => src.file_name(),
            (None, Some(r)) => format!("inline@{}", r.start),
            (None, None) => self.id.to_string(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectionError {
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("selection has no entry for element {0}")]
    Missing(ElementId),
}

/// Enabled/disabled state over an element inventory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Selection(BTreeMap<ElementId, bool>);

impl Selection {
    pub fn all(elements: &[ScriptElement], enabled: bool) -> Self {
        Selection(elements.iter().map(|e| (e.id.clone(), enabled)).collect())
    }

    pub fn from_map(map: BTreeMap<ElementId, bool>) -> Self {
        Selection(map)
    }

    pub fn get(&self, id: &ElementId) -> Option<bool> {
        self.0.get(id).copied()
    }

    pub fn is_enabled(&self, id: &ElementId) -> bool {
        self.0.get(id).copied().unwrap_or(false)
    }

    pub fn set(&mut self, id: &ElementId, enabled: bool) -> Result<(), SelectionError> {
        match self.0.get_mut(id) {
            Some(v) => {
                *v = enabled;
                Ok(())
            }
            None => Err(SelectionError::UnknownElement(id.clone())),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ElementId, bool)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<ElementId, bool> {
        &self.0
    }

    /// Checks that the selection is total over `elements` and nothing more.
    pub fn check_total(&self, elements: &[ScriptElement]) -> Result<(), SelectionError> {
        for e in elements {
            if !self.0.contains_key(&e.id) {
                return Err(SelectionError::Missing(e.id.clone()));
            }
        }
        if self.0.len() != elements.len() {
            let known: std::collections::HashSet<_> = elements.iter().map(|e| &e.id).collect();
            if let Some(extra) = self.0.keys().find(|k| !known.contains(k)) {
                return Err(SelectionError::UnknownElement(extra.clone()));
            }
        }
        Ok(())
    }

    /// Elements whose state differs between `self` and `other`, with the new value.
    pub fn delta(&self, other: &Selection) -> BTreeMap<ElementId, bool> {
        other
            .0
            .iter()
            .filter(|(k, v)| self.0.get(*k) != Some(v))
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnapshotId(String);

impl SnapshotId {
    pub fn new(raw: impl Into<String>) -> Self {
        SnapshotId(raw.into())
    }

    pub fn generate() -> Self {
        SnapshotId(uuid::Uuid::new_v4().simple().to_string()[..16].to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SnapshotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub url: CanonicalUrl,
    /// 0 when the request failed before any response arrived.
    pub status: u16,
    pub media_type: String,
    pub headers: Vec<(String, String)>,
    pub body_path: String,
    pub body_length: u64,
    pub initiator_url: Option<CanonicalUrl>,
}

impl ResourceRecord {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// A sealed page capture. Records keep their capture order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub snapshot_id: SnapshotId,
    pub index_url: CanonicalUrl,
    pub resources: Vec<ResourceRecord>,
    #[serde(with = "time::serde::rfc3339")]
    pub captured_at: OffsetDateTime,
}

impl Snapshot {
    pub fn record(&self, url: &CanonicalUrl) -> Option<&ResourceRecord> {
        self.resources.iter().find(|r| &r.url == url)
    }

    pub fn index_record(&self) -> Option<&ResourceRecord> {
        self.record(&self.index_url)
    }
}
