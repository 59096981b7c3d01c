//! Page simplification by byte-range splicing.
//!
//! Disabled document-level scripts are cut out of the index bytes exactly
//! at their tag boundaries; every other byte is left alone. Disabled
//! recursive scripts cannot be cut from the document, so they go into a
//! block report naming the scripts that request them.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::parse_document;
use crate::model::{
    ByteRange, CanonicalUrl, Category, ElementId, Parent, ScriptElement, ScriptKind, Selection,
    SelectionError,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewriteError {
    #[error("script ranges {0:?} and {1:?} overlap")]
    Overlap(ByteRange, ByteRange),
    #[error("range {0:?} lies outside the {1}-byte document")]
    OutOfBounds(ByteRange, usize),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub url: CanonicalUrl,
    pub parents: Vec<CanonicalUrl>,
    pub category: Category,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockReport {
    #[serde(rename = "blocked")]
    pub entries: Vec<BlockEntry>,
}

impl BlockReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("block report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplifiedArtifact {
    pub html_bytes: Vec<u8>,
    pub block_report: BlockReport,
    /// Ascending by start offset.
    pub removed_ranges: Vec<ByteRange>,
    pub blocked_urls: BTreeSet<CanonicalUrl>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimplifyOptions {
    /// Leave an HTML comment naming each removed element.
    pub mark_removals: bool,
}

/// URLs to block at the proxy: sources of disabled External and Recursive
/// elements, minus any URL an enabled element still loads (a duplicated
/// script tag may be partly enabled).
pub fn blocked_urls(elements: &[ScriptElement], sel: &Selection) -> BTreeSet<CanonicalUrl> {
    let still_loaded: BTreeSet<&CanonicalUrl> = elements
        .iter()
        .filter(|e| sel.is_enabled(&e.id))
        .filter_map(|e| e.src.as_ref())
        .collect();
    elements
        .iter()
        .filter(|e| e.kind != ScriptKind::Inline && !sel.is_enabled(&e.id))
        .filter_map(|e| e.src.clone())
        .filter(|u| !still_loaded.contains(u))
        .collect()
}

pub fn simplify(
    index_bytes: &[u8],
    index_url: &CanonicalUrl,
    elements: &[ScriptElement],
    sel: &Selection,
    opts: SimplifyOptions,
) -> Result<SimplifiedArtifact, RewriteError> {
    sel.check_total(elements)?;

    let mut ranges: Vec<(ByteRange, &ElementId)> = elements
        .iter()
        .filter_map(|e| e.doc_range.map(|r| (r, &e.id)))
        .collect();
    ranges.sort();
    for pair in ranges.windows(2) {
        if pair[0].0.overlaps(&pair[1].0) {
            return Err(RewriteError::Overlap(pair[0].0, pair[1].0));
        }
    }
    if let Some((r, _)) = ranges.iter().find(|(r, _)| r.end > index_bytes.len()) {
        return Err(RewriteError::OutOfBounds(*r, index_bytes.len()));
    }

    let removed: Vec<(ByteRange, &ElementId)> = ranges
        .into_iter()
        .filter(|(_, id)| !sel.is_enabled(id))
        .collect();

    let mut html = index_bytes.to_vec();
    for (r, id) in removed.iter().rev() {
        let replacement = if opts.mark_removals {
            format!("<!-- removed script {id} -->").into_bytes()
        } else {
            Vec::new()
        };
        html.splice(r.start..r.end, replacement);
    }

    let by_id: HashMap<&ElementId, &ScriptElement> = elements.iter().map(|e| (&e.id, e)).collect();
    let entries = elements
        .iter()
        .filter(|e| e.kind == ScriptKind::Recursive && !sel.is_enabled(&e.id))
        .map(|e| {
            let mut parents: Vec<CanonicalUrl> = Vec::new();
            for p in &e.parents {
                let url = match p {
                    Parent::Document => Some(index_url.clone()),
                    Parent::Element(pid) => by_id.get(pid).map(|pe| match &pe.src {
                        Some(src) => src.clone(),
                        None => index_url.clone(),
                    }),
                    Parent::Unresolved(u) => Some(u.clone()),
                };
                if let Some(u) = url {
                    if !parents.contains(&u) {
                        parents.push(u);
                    }
                }
            }
            if parents.is_empty() {
                parents.push(index_url.clone());
            }
            BlockEntry {
                url: e.src.clone().expect("recursive elements carry a src"),
                parents,
                category: e.category,
                reason: format!("disabled {} script requested at runtime", e.criticality),
            }
        })
        .collect();

    Ok(SimplifiedArtifact {
        html_bytes: html,
        block_report: BlockReport { entries },
        removed_ranges: removed.iter().map(|(r, _)| *r).collect(),
        blocked_urls: blocked_urls(elements, sel),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub problems: Vec<String>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Re-parses the simplified page and checks that exactly the enabled
/// document-level scripts survive, in order, and that no removed span is
/// still present.
pub fn verify_simplification(
    original: &[u8],
    base: &CanonicalUrl,
    artifact: &SimplifiedArtifact,
    elements: &[ScriptElement],
    sel: &Selection,
) -> Verification {
    let mut problems = Vec::new();
    let doc = parse_document(&artifact.html_bytes, base);
    let mut expected: Vec<&ScriptElement> = elements
        .iter()
        .filter(|e| e.doc_range.is_some() && sel.is_enabled(&e.id))
        .collect();
    expected.sort_by_key(|e| e.doc_range.map(|r| r.start));

    let found: Vec<&[u8]> = doc
        .script_nodes
        .iter()
        .map(|n| n.range.slice(&doc.index_bytes))
        .collect();
    for (i, e) in expected.iter().enumerate() {
        let want = e.doc_range.expect("filtered").slice(original);
        match found.get(i) {
            Some(got) if *got == want => {}
            Some(_) => problems.push(format!(
                "script #{i} does not match enabled element {} ({})",
                e.id,
                e.label()
            )),
            None => problems.push(format!("enabled element {} ({}) is missing", e.id, e.label())),
        }
    }
    if found.len() > expected.len() {
        problems.push(format!(
            "{} unexpected script node(s) remain",
            found.len() - expected.len()
        ));
    }

    for r in &artifact.removed_ranges {
        match elements.iter().find(|e| e.doc_range == Some(*r)) {
            Some(e) if sel.is_enabled(&e.id) => {
                problems.push(format!("enabled element {} was removed", e.id))
            }
            None => problems.push(format!("removed span {r:?} belongs to no element")),
            _ => {}
        }
    }
    for e in elements
        .iter()
        .filter(|e| e.doc_range.is_some() && !sel.is_enabled(&e.id))
    {
        if !artifact.removed_ranges.contains(&e.doc_range.expect("filtered")) {
            problems.push(format!("disabled element {} ({}) was not removed", e.id, e.label()));
        }
    }
    // every byte outside the removed spans must be the original byte
    let splice = |marked: bool| {
        let mut out = Vec::with_capacity(original.len());
        let mut at = 0;
        for r in &artifact.removed_ranges {
            if r.start < at || r.end > original.len() {
                return None;
            }
            out.extend_from_slice(&original[at..r.start]);
            if marked {
                if let Some(e) = elements.iter().find(|e| e.doc_range == Some(*r)) {
                    out.extend_from_slice(format!("<!-- removed script {} -->", e.id).as_bytes());
                }
            }
            at = r.end;
        }
        out.extend_from_slice(&original[at..]);
        Some(out)
    };
    let faithful = [false, true]
        .into_iter()
        .any(|marked| splice(marked).as_deref() == Some(artifact.html_bytes.as_slice()));
    if !faithful {
        problems.push("bytes outside the removed spans differ from the original".to_owned());
    }
    Verification { problems }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{build_inventory, LogEntry, NetworkLog};
    use crate::model::Criticality;

    fn url(s: &str) -> CanonicalUrl {
        CanonicalUrl::parse(s).unwrap()
    }

    const PAGE: &[u8] = br#"<html><head><script src="/a.js"></script><script>inline()</script></head><body><p>x</p><script src="/c.js"></script></body></html>"#;

    fn inventory() -> Vec<ScriptElement> {
        let index = url("https://e.com/");
        let doc = parse_document(PAGE, &index);
        let log = NetworkLog::new([
            LogEntry { url: url("https://e.com/a.js"), media_type: "text/javascript".into(), initiator_url: Some(index.clone()), byte_size: 1 },
            LogEntry { url: url("https://e.com/b.js"), media_type: "text/javascript".into(), initiator_url: Some(url("https://e.com/a.js")), byte_size: 1 },
            LogEntry { url: url("https://e.com/c.js"), media_type: "text/javascript".into(), initiator_url: Some(index.clone()), byte_size: 1 },
        ]);
        build_inventory(&doc, &index, &log, &std::collections::HashMap::new()).elements
    }

    #[test]
    fn all_enabled_is_identity() {
        let els = inventory();
        let sel = Selection::all(&els, true);
        let art = simplify(PAGE, &url("https://e.com/"), &els, &sel, SimplifyOptions::default()).unwrap();
        assert_eq!(art.html_bytes, PAGE);
        assert!(art.block_report.entries.is_empty());
        assert!(art.blocked_urls.is_empty());
        assert!(verify_simplification(PAGE, &url("https://e.com/"), &art, &els, &sel).passed());
    }

    #[test]
    fn removes_exact_inline_span() {
        let els = inventory();
        let inline = els.iter().find(|e| e.kind == ScriptKind::Inline).unwrap();
        let mut sel = Selection::all(&els, true);
        sel.set(&inline.id, false).unwrap();
        let art = simplify(PAGE, &url("https://e.com/"), &els, &sel, SimplifyOptions::default()).unwrap();
        let r = inline.doc_range.unwrap();
        assert_eq!(PAGE.len() - art.html_bytes.len(), r.len());
        let mut expect = PAGE[..r.start].to_vec();
        expect.extend_from_slice(&PAGE[r.end..]);
        assert_eq!(art.html_bytes, expect);
        assert!(verify_simplification(PAGE, &url("https://e.com/"), &art, &els, &sel).passed());
    }

    #[test]
    fn disabled_chain_is_reported() {
        let mut els = inventory();
        for e in &mut els {
            if e.kind == ScriptKind::Recursive {
                e.category = Category::Analytics;
                e.criticality = Criticality::NonCritical;
            }
        }
        let a = els[0].id.clone();
        let b = els.iter().find(|e| e.kind == ScriptKind::Recursive).unwrap().id.clone();
        let mut sel = Selection::all(&els, true);
        sel.set(&a, false).unwrap();
        sel.set(&b, false).unwrap();
        let art = simplify(PAGE, &url("https://e.com/"), &els, &sel, SimplifyOptions::default()).unwrap();
        assert_eq!(art.block_report.entries.len(), 1);
        let entry = &art.block_report.entries[0];
        assert_eq!(entry.url, url("https://e.com/b.js"));
        assert_eq!(entry.parents, vec![url("https://e.com/a.js")]);
        assert_eq!(
            art.blocked_urls.iter().map(|u| u.as_str()).collect::<Vec<_>>(),
            vec!["https://e.com/a.js", "https://e.com/b.js"]
        );
        let reparsed = parse_document(&art.html_bytes, &url("https://e.com/"));
        assert_eq!(reparsed.script_nodes.len(), 2);
        assert!(!art.html_bytes.windows(6).any(|w| w == b"/a.js\""));
        let json = art.block_report.to_json();
        assert!(json.contains("\"blocked\""));
    }

    #[test]
    fn seeded_faults_fail_verification() {
        let els = inventory();
        let index = url("https://e.com/");
        let mut sel = Selection::all(&els, true);
        let c = els[2].id.clone();
        sel.set(&c, false).unwrap();
        let good = simplify(PAGE, &index, &els, &sel, SimplifyOptions::default()).unwrap();
        assert!(verify_simplification(PAGE, &index, &good, &els, &sel).passed());

        // an enabled script deleted by hand
        let mut bad = good.clone();
        let r = els[1].doc_range.unwrap();
        bad.html_bytes.drain(r.start..r.end);
        let v = verify_simplification(PAGE, &index, &bad, &els, &sel);
        assert!(!v.passed());
        assert!(v.problems.iter().any(|p| p.contains(els[1].id.as_str())), "{:?}", v.problems);

        // a disabled script left in place
        let stray = simplify(PAGE, &index, &els, &Selection::all(&els, true), SimplifyOptions::default()).unwrap();
        let v = verify_simplification(PAGE, &index, &stray, &els, &sel);
        assert!(!v.passed());
    }

    #[test]
    fn marks_and_errors() {
        let els = inventory();
        let mut sel = Selection::all(&els, true);
        sel.set(&els[1].id, false).unwrap();
        let art = simplify(PAGE, &url("https://e.com/"), &els, &sel, SimplifyOptions { mark_removals: true }).unwrap();
        let text = String::from_utf8(art.html_bytes).unwrap();
        assert!(text.contains(&format!("<!-- removed script {} -->", els[1].id)));

        let mut short = sel.clone();
        short = Selection::from_map(short.as_map().iter().skip(1).map(|(k, v)| (k.clone(), *v)).collect());
        assert!(matches!(
            simplify(PAGE, &url("https://e.com/"), &els, &short, SimplifyOptions::default()),
            Err(RewriteError::Selection(_))
        ));

        let mut overlapping = els.clone();
        overlapping[1].doc_range = Some(ByteRange::new(overlapping[0].doc_range.unwrap().start + 1, overlapping[1].doc_range.unwrap().end));
        assert!(matches!(
            simplify(PAGE, &url("https://e.com/"), &overlapping, &sel, SimplifyOptions::default()),
            Err(RewriteError::Overlap(..))
        ));
    }
}
