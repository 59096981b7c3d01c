//! Breadth-first capture of a page and its statically referenced
//! subresources.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::html::{self, Token};
use crate::model::{CanonicalUrl, SnapshotId};

use super::store::{Recorded, SnapshotStore, StoreError};

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("fetching index {url}: {message}")]
    Index { url: CanonicalUrl, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthPolicy {
    /// 0 records the index only; 1 adds what the index references; 2 adds
    /// what those resources reference (fonts and images from stylesheets).
    pub max_depth: u32,
    pub max_resources: usize,
}

impl Default for DepthPolicy {
    fn default() -> Self {
        DepthPolicy {
            max_depth: 2,
            max_resources: 500,
        }
    }
}

/// Fetches `url` and its subresources into a new sealed snapshot.
pub async fn capture(
    store: &SnapshotStore,
    url: &CanonicalUrl,
    policy: DepthPolicy,
) -> Result<SnapshotId, CaptureError> {
    let client = reqwest::Client::builder()
        .user_agent(concat!("pageslim/", env!("CARGO_PKG_VERSION")))
        .build()
        .map_err(|e| CaptureError::Index {
            url: url.clone(),
            message: e.to_string(),
        })?;

    let index = fetch(&client, url, None).await;
    if index.status == 0 {
        return Err(CaptureError::Index {
            url: url.clone(),
            message: String::from_utf8_lossy(&index.body).into_owned(),
        });
    }

    let mut writer = store.begin(url)?;
    let mut seen = BTreeSet::from([url.clone()]);
    let mut queue = VecDeque::new();
    enqueue(&mut queue, &mut seen, url, &index, 1, policy);
    writer.add(url, index)?;
    let mut recorded = 1;

    while let Some((target, initiator, depth)) = queue.pop_front() {
        if recorded >= policy.max_resources {
            break;
        }
        let rec = fetch(&client, &target, Some(initiator)).await;
        if rec.status == 0 {
            tracing::warn!(url = %target, "subresource fetch failed");
        }
        enqueue(&mut queue, &mut seen, &target, &rec, depth + 1, policy);
        writer.add(&target, rec)?;
        recorded += 1;
    }
    Ok(writer.seal()?)
}

fn enqueue(
    queue: &mut VecDeque<(CanonicalUrl, CanonicalUrl, u32)>,
    seen: &mut BTreeSet<CanonicalUrl>,
    from: &CanonicalUrl,
    rec: &Recorded,
    depth: u32,
    policy: DepthPolicy,
) {
    if depth > policy.max_depth || !(200..300).contains(&rec.status) {
        return;
    }
    for r in references(&rec.media_type, from, &rec.body) {
        if seen.insert(r.clone()) {
            queue.push_back((r, from.clone(), depth));
        }
    }
}

async fn fetch(client: &reqwest::Client, url: &CanonicalUrl, initiator: Option<CanonicalUrl>) -> Recorded {
    let failed = |message: String| Recorded {
        status: 0,
        body: message.into_bytes(),
        initiator_url: initiator.clone(),
        ..Default::default()
    };
    let resp = match client.get(url.as_str()).send().await {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let status = resp.status().as_u16();
    let headers: Vec<(String, String)> = resp
        .headers()
        .iter()
        .map(|(k, v)| (k.as_str().to_owned(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
        .collect();
    let media_type = headers
        .iter()
        .find(|(k, _)| k == "content-type")
        .map(|(_, v)| v.clone())
        .unwrap_or_default();
    match resp.bytes().await {
        Ok(body) => Recorded {
            status,
            media_type,
            headers,
            body: body.to_vec(),
            initiator_url: initiator,
        },
        Err(e) => failed(e.to_string()),
    }
}

fn is_html(media_type: &str) -> bool {
    let mt = media_type.to_ascii_lowercase();
    mt.starts_with("text/html") || mt.starts_with("application/xhtml")
}

fn is_css(media_type: &str, url: &CanonicalUrl) -> bool {
    let mt = media_type.to_ascii_lowercase();
    mt.starts_with("text/css")
        || ((mt.is_empty() || mt.starts_with("text/plain") || mt.starts_with("application/octet-stream"))
            && url.path().ends_with(".css"))
}

/// Absolute URLs of the subresources a body references, in document order.
pub fn references(media_type: &str, base: &CanonicalUrl, body: &[u8]) -> Vec<CanonicalUrl> {
    let mut raw = Vec::new();
    let mut base = base.clone();
    if is_html(media_type) {
        html_references(body, &mut base, &mut raw);
    } else if is_css(media_type, &base) {
        css_references(&String::from_utf8_lossy(body), &mut raw);
    }
    let mut out = Vec::new();
    for r in raw {
        let r = r.trim();
        if r.is_empty() || r.starts_with('#') {
            continue;
        }
        if let Ok(u) = base.join(r) {
            if matches!(u.as_str().split(':').next(), Some("http" | "https")) && !out.contains(&u) {
                out.push(u);
            }
        }
    }
    out
}

const LINK_RELS: &[&str] = &["stylesheet", "icon", "preload", "modulepreload", "prefetch", "manifest", "shortcut"];

fn html_references(body: &[u8], base: &mut CanonicalUrl, out: &mut Vec<String>) {
    let mut seen_base = false;
    for token in html::tokenize(body).tokens {
        let tag = match token {
            Token::StartTag(tag) => tag,
            Token::Raw(raw) => {
                if raw.open.name == "style" {
                    css_references(&String::from_utf8_lossy(raw.content.slice(body)), out);
                }
                raw.open
            }
            _ => continue,
        };
        if let Some(style) = tag.attr_value("style") {
            css_references(style, out);
        }
        match tag.name.as_str() {
            "base" if !seen_base => {
                if let Some(b) = tag.attr_value("href").and_then(|h| base.join(h).ok()) {
                    *base = b;
                    seen_base = true;
                }
            }
            "script" | "img" | "source" | "audio" | "video" | "track" | "embed" | "input" => {
                out.extend(tag.attr_value("src").map(str::to_owned));
                if let Some(srcset) = tag.attr_value("srcset") {
                    out.extend(srcset_urls(srcset));
                }
                out.extend(tag.attr_value("poster").map(str::to_owned));
            }
            "link" => {
                let rel = tag.attr_value("rel").unwrap_or("").to_ascii_lowercase();
                if rel.split_whitespace().any(|r| LINK_RELS.contains(&r)) {
                    out.extend(tag.attr_value("href").map(str::to_owned));
                }
            }
            _ => {}
        }
    }
}

fn srcset_urls(srcset: &str) -> impl Iterator<Item = String> + '_ {
    srcset
        .split(',')
        .filter_map(|c| c.split_whitespace().next())
        .map(str::to_owned)
}

/// `url(...)` values and `@import "..."` targets.
pub fn css_references(css: &str, out: &mut Vec<String>) {
    let lower = css.to_ascii_lowercase();
    let mut i = 0;
    while let Some(pos) = lower[i..].find("url(") {
        let start = i + pos + 4;
        let Some(len) = css[start..].find(')') else { break };
        out.push(unquote(&css[start..start + len]).to_owned());
        i = start + len;
    }
    let mut i = 0;
    while let Some(pos) = lower[i..].find("@import") {
        let rest = css[i + pos + 7..].trim_start();
        if let Some(q) = rest.chars().next().filter(|c| *c == '"' || *c == '\'') {
            if let Some(end) = rest[1..].find(q) {
                out.push(rest[1..1 + end].to_owned());
            }
        }
        i += pos + 7;
    }
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for q in ['"', '\''] {
        if let Some(inner) = s.strip_prefix(q).and_then(|t| t.strip_suffix(q)) {
            return inner;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> CanonicalUrl {
        CanonicalUrl::parse("https://e.com/dir/page.html").unwrap()
    }

    fn strs(v: Vec<CanonicalUrl>) -> Vec<String> {
        v.into_iter().map(|u| u.to_string()).collect()
    }

    #[test]
    fn html_refs() {
        let page = br#"<link rel=stylesheet href=s.css><link rel=canonical href=/x>
<script src="/a.js"></script><script>var x = "<img src=no.png>";</script>
<img src=i.png srcset="i2.png 2x, i3.png 3x"><video poster=p.jpg src=v.mp4></video>
<a href=/link.html>l</a><div style="background:url('bg.png')"></div>
<style>@font-face{src:url(f.woff2)} @import "more.css";</style><img src="data:image/png;base64,AA">"#;
        assert_eq!(
            strs(references("text/html", &base(), page)),
            [
                "https://e.com/dir/s.css",
                "https://e.com/a.js",
                "https://e.com/dir/i.png",
                "https://e.com/dir/i2.png",
                "https://e.com/dir/i3.png",
                "https://e.com/dir/v.mp4",
                "https://e.com/dir/p.jpg",
                "https://e.com/dir/bg.png",
                "https://e.com/dir/f.woff2",
                "https://e.com/dir/more.css",
            ]
        );
    }

    #[test]
    fn base_href_applies() {
        let page = br#"<base href="https://cdn.e.com/x/"><script src=a.js></script>"#;
        assert_eq!(strs(references("text/html", &base(), page)), ["https://cdn.e.com/x/a.js"]);
    }

    #[test]
    fn css_refs_resolve_against_stylesheet() {
        let css_url = CanonicalUrl::parse("https://e.com/css/site.css").unwrap();
        let css = br#"body{background:URL( "../img/bg.png" )} @import '/reset.css';"#;
        assert_eq!(
            strs(references("text/css", &css_url, css)),
            ["https://e.com/img/bg.png", "https://e.com/reset.css"]
        );
        assert!(references("application/javascript", &css_url, b"url(x)").is_empty());
    }
}
