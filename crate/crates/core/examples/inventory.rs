//! Lists every script element of a page from its HTML and request log.
//!
//!     cargo run --example inventory -- [page-dir]
//!
//! A page directory holds `index.html`, `log.jsonl` and `bodies.json`
//! (`{url: body}`); it defaults to one of the bundled test pages.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use pageslim::extract::{build_inventory, parse_document, NetworkLog};
use pageslim::model::{normalize_url, CanonicalUrl, Parent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pages/16-tag-manager-chain")
    });
    let html = std::fs::read(dir.join("index.html"))?;
    let log = NetworkLog::read_jsonl(BufReader::new(File::open(dir.join("log.jsonl"))?))?;
    let raw: BTreeMap<String, String> = serde_json::from_reader(File::open(dir.join("bodies.json"))?)?;
    let bodies: BTreeMap<CanonicalUrl, Vec<u8>> = raw
        .into_iter()
        .map(|(u, b)| Ok((normalize_url(&u, None)?, b.into_bytes())))
        .collect::<Result<_, pageslim::model::UrlError>>()?;

    // the first log entry is the page itself
    let index_url = log.entries().first().ok_or("empty log")?.url.clone();
    let doc = parse_document(&html, &index_url);
    let inventory = build_inventory(&doc, &index_url, &log, &bodies);

    println!("{index_url}: {} script elements", inventory.elements.len());
    for e in &inventory.elements {
        let parents: Vec<String> = e
            .parents
            .iter()
            .map(|p| match p {
                Parent::Document => "document".into(),
                Parent::Element(id) => id.to_string(),
                Parent::Unresolved(u) => format!("? {u}"),
            })
            .collect();
        let range = e.doc_range.map(|r| format!("{}..{}", r.start, r.end)).unwrap_or_default();
        println!("  {} {:<9} {:>6}B {:<12} {} <- [{}]", e.id, e.kind, e.byte_size, range, e.label(), parents.join(", "));
    }
    for w in &inventory.warnings {
        println!("  warning: {w}");
    }
    Ok(())
}
