//! Imports a HAR archive, drops the non-critical scripts and writes the
//! simplified page with its block report and metrics.
//!
//!     cargo run --example simplify_page -- [page.har] [out-dir]

use std::path::PathBuf;

use pageslim::analysis::analyze_snapshot;
use pageslim::classify::{Preferences, RuleSet};
use pageslim::metrics::resource_metrics;
use pageslim::proxy::{import_har, SnapshotStore};
use pageslim::rewrite::{simplify, verify_simplification, SimplifyOptions};
use pageslim::session::save_artifacts;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let har = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/budget.har"));
    let work = tempfile::tempdir()?;
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| work.path().join("out"));

    let store = SnapshotStore::open(work.path().join("store"))?;
    let (id, records) = import_har(&har, &store)?;
    println!("imported {records} records as snapshot {id}");

    let (snap, analysis) = analyze_snapshot(&store, &id, &RuleSet::default(), &Preferences::default())?;
    let index = snap.index_bytes()?;
    let index_url = &snap.snapshot.index_url;
    let artifact = simplify(&index, index_url, &analysis.elements, &analysis.selection, SimplifyOptions::default())?;
    let check = verify_simplification(&index, index_url, &artifact, &analysis.elements, &analysis.selection);
    if !check.passed() {
        return Err(format!("verification failed: {:?}", check.problems).into());
    }

    let before = resource_metrics(&snap.snapshot, &Default::default(), &index);
    let after = resource_metrics(&snap.snapshot, &artifact.blocked_urls, &artifact.html_bytes);
    let paths = save_artifacts(&out, &artifact, &before, &after)?;

    println!(
        "removed {} script tags ({} -> {} bytes), blocking {} URLs",
        artifact.removed_ranges.len(),
        index.len(),
        artifact.html_bytes.len(),
        artifact.blocked_urls.len()
    );
    for entry in &artifact.block_report.entries {
        println!("  runtime block: {} ({})", entry.url, entry.category);
    }
    println!("wrote {}", paths.html.parent().unwrap().display());
    Ok(())
}
