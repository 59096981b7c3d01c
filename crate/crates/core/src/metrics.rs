//! Resource metrics for page variants and a static content-similarity score.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::extract::is_javascript;
use crate::html::{self, Token};
use crate::model::{CanonicalUrl, Snapshot};

/// Request and byte totals for one page variant. Bytes are stored
/// (decoded) body lengths, not transfer sizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportCard {
    pub request_count: u64,
    pub total_bytes: u64,
    pub js_request_count: u64,
    pub js_bytes: u64,
    pub script_tag_count: u64,
}

/// Counts every recorded resource not in `blocked`; script tags are
/// counted in `index_html`, which may be a rewritten index.
pub fn resource_metrics(
    snapshot: &Snapshot,
    blocked: &BTreeSet<CanonicalUrl>,
    index_html: &[u8],
) -> ReportCard {
    let mut card = ReportCard::default();
    for r in snapshot.resources.iter().filter(|r| !blocked.contains(&r.url)) {
        card.request_count += 1;
        card.total_bytes += r.body_length;
        if is_javascript(&r.media_type, &r.url) {
            card.js_request_count += 1;
            card.js_bytes += r.body_length;
        }
    }
    card.script_tag_count = count_script_tags(index_html);
    card
}

pub fn count_script_tags(html_bytes: &[u8]) -> u64 {
    html::tokenize(html_bytes)
        .tokens
        .iter()
        .filter(|t| matches!(t, Token::Raw(r) if r.open.name == "script"))
        .count() as u64
}

/// Percentage reduction of one field, in tenths of a percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Tenths(i64),
    /// The baseline was zero.
    NotApplicable,
}

impl Reduction {
    /// `100 * (before - after) / before`, rounded half away from zero to 0.1.
    pub fn between(before: u64, after: u64) -> Self {
        if before == 0 {
            return Reduction::NotApplicable;
        }
        let num = 1000 * (before as i128 - after as i128);
        let den = before as i128;
        let rounded = if num >= 0 {
            (2 * num + den) / (2 * den)
        } else {
            -((-2 * num + den) / (2 * den))
        };
        Reduction::Tenths(rounded as i64)
    }

    pub fn percent(&self) -> Option<f64> {
        match self {
            Reduction::Tenths(t) => Some(*t as f64 / 10.0),
            Reduction::NotApplicable => None,
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reduction::Tenths(t) => {
                let sign = if *t < 0 { "-" } else { "" };
                write!(f, "{sign}{}.{}%", t.abs() / 10, t.abs() % 10)
            }
            Reduction::NotApplicable => f.write_str("n/a"),
        }
    }
}

impl Serialize for Reduction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.percent() {
            Some(p) => s.serialize_f64(p),
            None => s.serialize_str("n/a"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CardDiff {
    pub request_count: Reduction,
    pub total_bytes: Reduction,
    pub js_request_count: Reduction,
    pub js_bytes: Reduction,
    pub script_tag_count: Reduction,
}

pub fn diff(before: &ReportCard, after: &ReportCard) -> CardDiff {
    CardDiff {
        request_count: Reduction::between(before.request_count, after.request_count),
        total_bytes: Reduction::between(before.total_bytes, after.total_bytes),
        js_request_count: Reduction::between(before.js_request_count, after.js_request_count),
        js_bytes: Reduction::between(before.js_bytes, after.js_bytes),
        script_tag_count: Reduction::between(before.script_tag_count, after.script_tag_count),
    }
}

/// Fixed-width before/after table.
pub fn render_table(before: &ReportCard, after: &ReportCard) -> String {
    let d = diff(before, after);
    let rows: [(&str, u64, u64, Reduction); 5] = [
        ("requests", before.request_count, after.request_count, d.request_count),
        ("bytes", before.total_bytes, after.total_bytes, d.total_bytes),
        ("js requests", before.js_request_count, after.js_request_count, d.js_request_count),
        ("js bytes", before.js_bytes, after.js_bytes, d.js_bytes),
        ("script tags", before.script_tag_count, after.script_tag_count, d.script_tag_count),
    ];
    let mut out = format!("{:<12} {:>12} {:>12} {:>10}\n", "metric", "before", "after", "reduction");
    for (name, b, a, r) in rows {
        out.push_str(&format!("{name:<12} {b:>12} {a:>12} {:>10}\n", r.to_string()));
    }
    out.push_str("bytes are stored body lengths (decoded), not transfer sizes\n");
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VisibleContent {
    pub text_tokens: BTreeMap<String, u64>,
    pub media: BTreeSet<String>,
}

const HIDDEN_TEXT: &[&str] = &["script", "style", "noscript", "template", "textarea"];
const MEDIA_TAGS: &[&str] = &["img", "video", "iframe"];

/// Lowercased whitespace-split text outside scripts and styles, plus the
/// `src` of every img, video and iframe.
pub fn visible_content(html_bytes: &[u8]) -> VisibleContent {
    let mut out = VisibleContent::default();
    let add_text = |bytes: &[u8], out: &mut VisibleContent| {
        for tok in String::from_utf8_lossy(bytes).split_whitespace() {
            *out.text_tokens.entry(tok.to_lowercase()).or_default() += 1;
        }
    };
    let mut template_depth = 0usize;
    for token in html::tokenize(html_bytes).tokens {
        match token {
            Token::Text(r) if template_depth == 0 => add_text(r.slice(html_bytes), &mut out),
            Token::Raw(raw) if !HIDDEN_TEXT.contains(&raw.open.name.as_str()) => {
                if raw.open.name == "iframe" {
                    if let Some(src) = raw.open.attr_value("src") {
                        out.media.insert(src.trim().to_owned());
                    }
                } else {
                    add_text(raw.content.slice(html_bytes), &mut out);
                }
            }
            Token::StartTag(tag) => {
                if tag.name == "template" {
                    template_depth += 1;
                }
                if MEDIA_TAGS.contains(&tag.name.as_str()) {
                    if let Some(src) = tag.attr_value("src") {
                        out.media.insert(src.trim().to_owned());
                    }
                }
            }
            Token::EndTag { name, .. } if name == "template" => {
                template_depth = template_depth.saturating_sub(1)
            }
            _ => {}
        }
    }
    out
}

fn multiset_jaccard(a: &BTreeMap<String, u64>, b: &BTreeMap<String, u64>) -> f64 {
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    if keys.is_empty() {
        return 1.0;
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for k in keys {
        let (x, y) = (a.get(k).copied().unwrap_or(0), b.get(k).copied().unwrap_or(0));
        inter += x.min(y);
        union += x.max(y);
    }
    inter as f64 / union as f64
}

fn set_jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// `0.5 * text Jaccard + 0.5 * media Jaccard`, in [0, 1].
pub fn structural_similarity(original: &[u8], simplified: &[u8]) -> f64 {
    let a = visible_content(original);
    let b = visible_content(simplified);
    0.5 * multiset_jaccard(&a.text_tokens, &b.text_tokens) + 0.5 * set_jaccard(&a.media, &b.media)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions() {
        assert_eq!(Reduction::between(1000, 400), Reduction::Tenths(600));
        assert_eq!(Reduction::between(1000, 400).to_string(), "60.0%");
        assert_eq!(Reduction::between(7, 7), Reduction::Tenths(0));
        assert_eq!(Reduction::between(0, 0), Reduction::NotApplicable);
        assert_eq!(Reduction::between(0, 0).to_string(), "n/a");
        // 1/3 = 33.33..% -> 33.3; 2/3 = 66.66..% -> 66.7; 1/8 = 12.5% exact
        assert_eq!(Reduction::between(3, 2), Reduction::Tenths(333));
        assert_eq!(Reduction::between(3, 1), Reduction::Tenths(667));
        assert_eq!(Reduction::between(8, 7), Reduction::Tenths(125));
        // half-up: 1/16 = 6.25% -> 6.3
        assert_eq!(Reduction::between(16, 15), Reduction::Tenths(63));
        assert_eq!(Reduction::between(4, 5).to_string(), "-25.0%");
        assert_eq!(serde_json::to_string(&Reduction::NotApplicable).unwrap(), "\"n/a\"");
        assert_eq!(serde_json::to_string(&Reduction::Tenths(600)).unwrap(), "60.0");
    }

    #[test]
    fn identical_cards_reduce_nothing() {
        let c = ReportCard { request_count: 4, total_bytes: 10, js_request_count: 2, js_bytes: 3, script_tag_count: 1 };
        let d = diff(&c, &c);
        for r in [d.request_count, d.total_bytes, d.js_request_count, d.js_bytes, d.script_tag_count] {
            assert_eq!(r, Reduction::Tenths(0));
        }
        assert!(render_table(&c, &c).contains("0.0%"));
    }

    #[test]
    fn similarity_ignores_scripts() {
        let a = b"<p>Hello world</p><script>var hidden = 'words';</script><img src=a.png>";
        let b = b"<p>Hello world</p><img src=a.png>";
        assert_eq!(structural_similarity(a, a), 1.0);
        assert_eq!(structural_similarity(a, b), 1.0);
        assert_eq!(structural_similarity(b"", b""), 1.0);
    }

    #[test]
    fn similarity_half_images() {
        let a = b"<p>t</p><img src=1><img src=2><img src=3><img src=4>";
        let b = b"<p>t</p><img src=1><img src=2>";
        // text Jaccard 1, media Jaccard 2/4
        assert_eq!(structural_similarity(a, b), 0.5 + 0.5 * 0.5);
        assert_eq!(structural_similarity(a, b), structural_similarity(b, a));
    }
}
