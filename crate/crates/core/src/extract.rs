//! Script inventory: document-level script nodes plus the recursively
//! fetched scripts that only show up in the network log.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::har::HarEntry;
use crate::html::{self, Token};
use crate::model::{
    normalize_url, ByteRange, CanonicalUrl, Category, ContentHash, Criticality, ElementId, Parent,
    ScriptElement, ScriptKind, Snapshot,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Inline,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptNode {
    /// Open tag through close tag.
    pub range: ByteRange,
    pub kind: NodeKind,
    /// Raw `src` attribute value, entity-decoded but not resolved.
    pub src: Option<String>,
    pub content: ByteRange,
}

#[derive(Debug, Clone)]
pub struct DocumentModel {
    pub index_bytes: Arc<[u8]>,
    /// Base for resolving `src`, after any `<base href>`.
    pub base: CanonicalUrl,
    pub script_nodes: Vec<ScriptNode>,
    pub warnings: Vec<String>,
}

impl DocumentModel {
    pub fn content(&self, node: &ScriptNode) -> &[u8] {
        node.content.slice(&self.index_bytes)
    }
}

/// Finds every complete script element in `index_bytes`. Never fails:
/// anything unrecognizable becomes a warning.
pub fn parse_document(index_bytes: &[u8], base: &CanonicalUrl) -> DocumentModel {
    let tokens = html::tokenize(index_bytes);
    let mut warnings: Vec<String> = tokens
        .warnings
        .iter()
        .map(|w| format!("offset {}: {}", w.offset, w.message))
        .collect();
    let mut effective_base = base.clone();
    let mut seen_base = false;
    let mut script_nodes = Vec::new();
    for token in tokens.tokens {
        match token {
            Token::StartTag(tag) if tag.name == "base" && !seen_base => {
                if let Some(href) = tag.attr_value("href") {
                    seen_base = true;
                    match base.join(href) {
                        Ok(b) => effective_base = b,
                        Err(e) => warnings.push(format!("ignoring <base href>: {e}")),
                    }
                }
            }
            Token::Raw(raw) if raw.open.name == "script" => {
                if raw.close.is_none() {
                    warnings.push(format!(
                        "offset {}: script element never closed; not inventoried",
                        raw.open.range.start
                    ));
                    continue;
                }
                let src = raw.open.attr_value("src").map(str::to_owned);
                script_nodes.push(ScriptNode {
                    range: raw.range(),
                    kind: if src.is_some() {
                        NodeKind::External
                    } else {
                        NodeKind::Inline
                    },
                    src,
                    content: raw.content,
                });
            }
            _ => {}
        }
    }
    DocumentModel {
        index_bytes: Arc::from(index_bytes),
        base: effective_base,
        script_nodes,
        warnings,
    }
}

const JS_MEDIA_TYPES: &[&str] = &[
    "application/javascript",
    "application/x-javascript",
    "application/ecmascript",
    "application/x-ecmascript",
    "text/javascript",
    "text/ecmascript",
    "text/x-javascript",
    "text/x-ecmascript",
    "text/jscript",
    "text/livescript",
    "text/javascript1.0",
    "text/javascript1.1",
    "text/javascript1.2",
    "text/javascript1.3",
    "text/javascript1.4",
    "text/javascript1.5",
];

/// Media types that say nothing about the payload; the URL decides.
const GENERIC_MEDIA_TYPES: &[&str] = &[
    "",
    "text/plain",
    "application/octet-stream",
    "binary/octet-stream",
    "application/unknown",
];

fn essence(media_type: &str) -> String {
    media_type
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase()
}

/// JS media type, or a `.js`/`.mjs` path under a generic media type.
pub fn is_javascript(media_type: &str, url: &CanonicalUrl) -> bool {
    let mt = essence(media_type);
    if JS_MEDIA_TYPES.contains(&mt.as_str()) {
        return true;
    }
    if !GENERIC_MEDIA_TYPES.contains(&mt.as_str()) {
        return false;
    }
    let path = url.path().to_ascii_lowercase();
    path.ends_with(".js") || path.ends_with(".mjs")
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("network log line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogEntry {
    pub url: CanonicalUrl,
    pub media_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initiator_url: Option<CanonicalUrl>,
    pub byte_size: u64,
}

impl LogEntry {
    pub fn is_javascript(&self) -> bool {
        is_javascript(&self.media_type, &self.url)
    }
}

/// Ordered request log, unique per URL (first occurrence wins).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetworkLog {
    entries: Vec<LogEntry>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawLogLine {
    url: String,
    #[serde(default)]
    media_type: String,
    #[serde(default)]
    initiator_url: Option<String>,
    #[serde(default)]
    byte_size: u64,
}

impl NetworkLog {
    pub fn new(entries: impl IntoIterator<Item = LogEntry>) -> Self {
        let mut seen = HashSet::new();
        NetworkLog {
            entries: entries
                .into_iter()
                .filter(|e| seen.insert(e.url.clone()))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn get(&self, url: &CanonicalUrl) -> Option<&LogEntry> {
        self.entries.iter().find(|e| &e.url == url)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads the JSON-lines format; blank lines are skipped and URLs are
    /// canonicalized.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, LogError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| LogError::Line {
                line: i + 1,
                message,
            };
            let raw: RawLogLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let url = normalize_url(&raw.url, None).map_err(|e| err(e.to_string()))?;
            let initiator_url = raw
                .initiator_url
                .filter(|s| !s.is_empty())
                .map(|s| normalize_url(&s, None))
                .transpose()
                .map_err(|e| err(e.to_string()))?;
            entries.push(LogEntry {
                url,
                media_type: raw.media_type,
                initiator_url,
                byte_size: raw.byte_size,
            });
        }
        Ok(NetworkLog::new(entries))
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn from_har(entries: &[HarEntry]) -> Self {
        NetworkLog::new(entries.iter().map(|e| LogEntry {
            url: e.url.clone(),
            media_type: e.media_type.clone(),
            initiator_url: e.initiator_url.clone(),
            byte_size: e.body.len() as u64,
        }))
    }

    pub fn from_snapshot(snapshot: &Snapshot) -> Self {
        NetworkLog::new(snapshot.resources.iter().map(|r| LogEntry {
            url: r.url.clone(),
            media_type: r.media_type.clone(),
            initiator_url: r.initiator_url.clone(),
            byte_size: r.body_length,
        }))
    }
}

/// Read access to captured response bodies.
pub trait BodySource {
    fn body(&self, url: &CanonicalUrl) -> Option<Vec<u8>>;
}

impl BodySource for HashMap<CanonicalUrl, Vec<u8>> {
    fn body(&self, url: &CanonicalUrl) -> Option<Vec<u8>> {
        self.get(url).cloned()
    }
}

impl BodySource for BTreeMap<CanonicalUrl, Vec<u8>> {
    fn body(&self, url: &CanonicalUrl) -> Option<Vec<u8>> {
        self.get(url).cloned()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Inventory {
    pub elements: Vec<ScriptElement>,
    pub warnings: Vec<String>,
}

fn unclassified(
    kind: ScriptKind,
    src: Option<CanonicalUrl>,
    doc_range: Option<ByteRange>,
    content: Vec<u8>,
    body_missing: bool,
) -> ScriptElement {
    let content_hash = ContentHash::of(&content);
    ScriptElement {
        id: ElementId::derive(kind, &content_hash, doc_range, src.as_ref()),
        kind,
        src,
        doc_range,
        content_hash,
        byte_size: content.len() as u64,
        category: Category::Unknown,
        confidence: 0.0,
        criticality: Criticality::Critical,
        parents: Vec::new(),
        body_missing,
        content: Some(Arc::from(content)),
    }
}

/// Builds the full element inventory: one element per document script node
/// and one Recursive element per JS log entry no script tag references.
///
/// `index_url` is the page URL as recorded in the log (before any
/// `<base href>`); log entries initiated by it are document-level.
pub fn build_inventory(
    doc: &DocumentModel,
    index_url: &CanonicalUrl,
    log: &NetworkLog,
    bodies: &dyn BodySource,
) -> Inventory {
    let mut warnings = Vec::new();
    let mut elements = Vec::new();
    for node in &doc.script_nodes {
        match node.kind {
            NodeKind::Inline => elements.push(unclassified(
                ScriptKind::Inline,
                None,
                Some(node.range),
                doc.content(node).to_vec(),
                false,
            )),
            NodeKind::External => {
                let raw = node.src.as_deref().unwrap_or_default();
                let src = match doc.base.join(raw) {
                    Ok(u) => u,
                    Err(e) => {
                        warnings.push(format!(
                            "offset {}: script src {raw:?} unusable ({e}); not inventoried",
                            node.range.start
                        ));
                        continue;
                    }
                };
                let (content, missing) = match bodies.body(&src) {
                    Some(b) => (b, false),
                    None => {
                        warnings.push(format!("missing resource for external script {src}"));
                        (Vec::new(), true)
                    }
                };
                elements.push(unclassified(
                    ScriptKind::External,
                    Some(src),
                    Some(node.range),
                    content,
                    missing,
                ));
            }
        }
    }

    let document_srcs: HashSet<CanonicalUrl> =
        elements.iter().filter_map(|e| e.src.clone()).collect();
    let first_recursive = elements.len();
    for entry in log.entries() {
        if !entry.is_javascript() || document_srcs.contains(&entry.url) || &entry.url == index_url
        {
            continue;
        }
        let (content, missing) = match bodies.body(&entry.url) {
            Some(b) => (b, false),
            None => {
                warnings.push(format!("body missing for recursive script {}", entry.url));
                (Vec::new(), true)
            }
        };
        elements.push(unclassified(
            ScriptKind::Recursive,
            Some(entry.url.clone()),
            None,
            content,
            missing,
        ));
    }

    let mut by_src: HashMap<CanonicalUrl, Vec<ElementId>> = HashMap::new();
    for e in &elements {
        if let Some(src) = &e.src {
            by_src.entry(src.clone()).or_default().push(e.id.clone());
        }
    }
    for e in &mut elements[first_recursive..] {
        let src = e.src.clone().expect("recursive elements carry a src");
        e.parents = resolve_parents(&src, index_url, log, &by_src);
        if let Some(Parent::Unresolved(u)) = e.parents.first() {
            warnings.push(format!("initiator {u} of {src} matches no script element"));
        }
    }

    Inventory { elements, warnings }
}

/// Follows the initiator chain of `url` through non-script resources until
/// it reaches a script element, the document, or a dead end.
fn resolve_parents(
    url: &CanonicalUrl,
    index_url: &CanonicalUrl,
    log: &NetworkLog,
    by_src: &HashMap<CanonicalUrl, Vec<ElementId>>,
) -> Vec<Parent> {
    let mut visited = HashSet::from([url.clone()]);
    let mut current = log.get(url).and_then(|e| e.initiator_url.clone());
    loop {
        let Some(init) = current else {
            return vec![Parent::Document];
        };
        if &init == index_url {
            return vec![Parent::Document];
        }
        if let Some(ids) = by_src.get(&init) {
            if &init != url {
                return ids.iter().cloned().map(Parent::Element).collect();
            }
        }
        if !visited.insert(init.clone()) {
            return vec![Parent::Unresolved(init)];
        }
        match log.get(&init) {
            Some(entry) if !entry.is_javascript() => current = entry.initiator_url.clone(),
            _ => return vec![Parent::Unresolved(init)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn url(s: &str) -> CanonicalUrl {
        CanonicalUrl::parse(s).unwrap()
    }

    fn entry(u: &str, mt: &str, init: Option<&str>) -> LogEntry {
        LogEntry {
            url: url(u),
            media_type: mt.into(),
            initiator_url: init.map(url),
            byte_size: 0,
        }
    }

    #[test]
    fn single_inline_node() {
        let base = url("https://e.com/");
        let doc = parse_document(b"<p>x</p><script>var a=1;</script>", &base);
        assert_eq!(doc.script_nodes.len(), 1);
        assert_eq!(doc.script_nodes[0].kind, NodeKind::Inline);
        assert_eq!(doc.content(&doc.script_nodes[0]), b"var a=1;");
    }

    #[test]
    fn external_then_inline_ranges_slice_exactly() {
        let html = br#"<script src="a.js"></script><script>x()</script>"#;
        let doc = parse_document(html, &url("https://e.com/"));
        let n = &doc.script_nodes;
        assert_eq!(n.len(), 2);
        assert_eq!(n[0].kind, NodeKind::External);
        assert_eq!(n[0].src.as_deref(), Some("a.js"));
        assert_eq!(n[0].range.slice(html), br#"<script src="a.js"></script>"#);
        assert_eq!(n[1].range.slice(html), b"<script>x()</script>");
        assert!(n[0].range.end <= n[1].range.start);
    }

    #[test]
    fn commented_script_is_ignored() {
        let doc = parse_document(b"<!-- <script>evil()</script> -->", &url("https://e.com/"));
        assert!(doc.script_nodes.is_empty());
    }

    #[test]
    fn base_href_changes_resolution() {
        let html = br#"<head><base href="https://cdn.e.com/v2/"><script src="a.js"></script>"#;
        let doc = parse_document(html, &url("https://e.com/page"));
        let inv = build_inventory(&doc, &url("https://e.com/page"), &NetworkLog::default(), &HashMap::new());
        assert_eq!(inv.elements[0].src.as_ref().unwrap().as_str(), "https://cdn.e.com/v2/a.js");
    }

    #[test]
    fn media_type_detection() {
        let u = url("https://e.com/x");
        assert!(is_javascript("application/javascript", &u));
        assert!(is_javascript("text/javascript; charset=utf-8", &u));
        assert!(is_javascript("text/plain", &url("https://t.com/tracker.js")));
        assert!(is_javascript("", &url("https://t.com/m.mjs?v=1")));
        assert!(!is_javascript("text/css", &url("https://e.com/style.css")));
        assert!(!is_javascript("text/html", &url("https://e.com/weird.js")));
        assert!(!is_javascript("text/plain", &url("https://e.com/readme.txt")));
    }

    #[test]
    fn recursive_detection_and_parents() {
        let index = url("https://e.com/");
        let doc = parse_document(br#"<script src="/a.js"></script>"#, &index);
        let log = NetworkLog::new([
            entry("https://e.com/", "text/html", None),
            entry("https://e.com/a.js", "application/javascript", Some("https://e.com/")),
            entry("https://e.com/b.js", "application/javascript", Some("https://e.com/a.js")),
        ]);
        let bodies: HashMap<_, _> = [
            (url("https://e.com/a.js"), b"load('b')".to_vec()),
            (url("https://e.com/b.js"), b"b()".to_vec()),
        ]
        .into();
        let inv = build_inventory(&doc, &index, &log, &bodies);
        assert_eq!(inv.elements.len(), 2);
        let (a, b) = (&inv.elements[0], &inv.elements[1]);
        assert_eq!(a.kind, ScriptKind::External);
        assert_eq!(a.byte_size, 9);
        assert_eq!(b.kind, ScriptKind::Recursive);
        assert_eq!(b.parents, vec![Parent::Element(a.id.clone())]);
        assert!(b.doc_range.is_none());
    }

    #[test]
    fn initiator_chain_through_non_script() {
        let index = url("https://e.com/");
        let doc = parse_document(br#"<script src="/a.js"></script>"#, &index);
        let log = NetworkLog::new([
            entry("https://e.com/a.js", "application/javascript", Some("https://e.com/")),
            entry("https://e.com/frame.html", "text/html", Some("https://e.com/a.js")),
            entry("https://e.com/c.js", "text/javascript", Some("https://e.com/frame.html")),
            entry("https://e.com/d.js", "text/javascript", Some("https://elsewhere.com/x.css")),
            entry("https://e.com/e.js", "text/javascript", None),
        ]);
        let inv = build_inventory(&doc, &index, &log, &HashMap::new());
        let a = inv.elements[0].id.clone();
        assert_eq!(inv.elements[1].parents, vec![Parent::Element(a)]);
        assert_eq!(
            inv.elements[2].parents,
            vec![Parent::Unresolved(url("https://elsewhere.com/x.css"))]
        );
        assert_eq!(inv.elements[3].parents, vec![Parent::Document]);
        assert!(inv.elements[1].body_missing);
    }

    #[test]
    fn duplicate_external_tags_stay_distinct() {
        let html = br#"<script src="a.js"></script><script src="a.js"></script>"#;
        let index = url("https://e.com/");
        let doc = parse_document(html, &index);
        let inv = build_inventory(&doc, &index, &NetworkLog::default(), &HashMap::new());
        assert_eq!(inv.elements.len(), 2);
        assert_eq!(inv.elements[0].src, inv.elements[1].src);
        assert_ne!(inv.elements[0].doc_range, inv.elements[1].doc_range);
        assert_ne!(inv.elements[0].id, inv.elements[1].id);
        assert!(inv.elements.iter().all(|e| e.body_missing));
    }

    #[test]
    fn empty_document_empty_inventory() {
        let index = url("https://e.com/");
        let doc = parse_document(b"<html><body>hi</body></html>", &index);
        let inv = build_inventory(&doc, &index, &NetworkLog::default(), &HashMap::new());
        assert!(inv.elements.is_empty());
    }

    #[test]
    fn jsonl_round_trip_and_dedup() {
        let text = "{\"url\":\"HTTPS://E.com/a.js#x\",\"mediaType\":\"text/javascript\",\"byteSize\":3}\n\n\
                    {\"url\":\"https://e.com/a.js\",\"mediaType\":\"text/javascript\",\"byteSize\":9}\n\
                    {\"url\":\"https://e.com/b.js\",\"mediaType\":\"\",\"initiatorUrl\":\"https://e.com/a.js\",\"byteSize\":1}\n";
        let log = NetworkLog::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.entries()[0].byte_size, 3);
        let mut out = Vec::new();
        log.write_jsonl(&mut out).unwrap();
        assert_eq!(NetworkLog::read_jsonl(out.as_slice()).unwrap(), log);

        let bad = NetworkLog::read_jsonl("{\"url\":\"a.js\"}\n".as_bytes());
        assert!(matches!(bad, Err(LogError::Line { line: 1, .. })));
    }
}
