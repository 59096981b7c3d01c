//! Prints the before/after resource table for the default selection of a
//! HAR archive.
//!
//!     cargo run --example report -- [page.har]

use std::path::PathBuf;

use pageslim::analysis::analyze_snapshot;
use pageslim::classify::{Preferences, RuleSet};
use pageslim::metrics::{render_table, resource_metrics, structural_similarity};
use pageslim::proxy::{import_har, SnapshotStore};
use pageslim::rewrite::{simplify, SimplifyOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let har = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/budget.har"));
    let work = tempfile::tempdir()?;
    let store = SnapshotStore::open(work.path())?;
    let (id, _) = import_har(&har, &store)?;
    let (snap, a) = analyze_snapshot(&store, &id, &RuleSet::default(), &Preferences::default())?;
    let index = snap.index_bytes()?;
    let art = simplify(&index, &snap.snapshot.index_url, &a.elements, &a.selection, SimplifyOptions::default())?;

    let before = resource_metrics(&snap.snapshot, &Default::default(), &index);
    let after = resource_metrics(&snap.snapshot, &art.blocked_urls, &art.html_bytes);
    print!("{}", render_table(&before, &after));
    println!("structural similarity {:.3}", structural_similarity(&index, &art.html_bytes));
    Ok(())
}
