//! Imports a HAR archive and replays it offline, first verbatim and then
//! with the non-critical scripts stubbed out.
//!
//!     cargo run --example replay -- [page.har] [--hold]
//!
//! With `--hold` the server keeps running until Ctrl-C so the page can be
//! opened in a browser.

use std::path::PathBuf;

use pageslim::analysis::analyze_snapshot;
use pageslim::classify::{Preferences, RuleSet};
use pageslim::proxy::{import_har, serve, ServeMode, SnapshotStore, StubPolicy};
use pageslim::rewrite::blocked_urls;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let hold = args.iter().any(|a| a == "--hold");
    let har = args
        .iter()
        .find(|a| !a.starts_with("--"))
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/budget.har"));

    let work = tempfile::tempdir()?;
    let store = SnapshotStore::open(work.path())?;
    let (id, _) = import_har(&har, &store)?;
    let server = serve(&store, &id, ServeMode::Replay, "127.0.0.1:0".parse()?).await?;
    println!("replaying {} at {}", store.load(&id)?.index_url, server.index_url());

    let (_, analysis) = analyze_snapshot(&store, &id, &RuleSet::default(), &Preferences::default())?;
    let blocked = blocked_urls(&analysis.elements, &analysis.selection);
    let snapshot = store.load(&id)?;
    // the page, two kept resources and the first few blocked ones
    let mut sample: Vec<_> = snapshot.resources.iter().filter(|r| !blocked.contains(&r.url)).take(3).collect();
    sample.extend(snapshot.resources.iter().filter(|r| blocked.contains(&r.url)).take(4));

    let client = reqwest::Client::builder().no_proxy().build()?;
    for label in ["replay", "with blocklist"] {
        if label != "replay" {
            server.set_mode(ServeMode::ReplayWithBlocklist { blocked: blocked.clone(), stub: StubPolicy::EmptyJs });
        }
        println!("{label}:");
        for r in &sample {
            let resp = client.get(server.raw_url_for(&r.url)).send().await?;
            let status = resp.status();
            let len = resp.bytes().await?.len();
            println!("  {status} {len:>6}B {}", r.url);
        }
    }
    println!("{:?}", server.stats());

    if hold {
        println!("serving until Ctrl-C");
        tokio::signal::ctrl_c().await?;
    }
    server.shutdown().await;
    Ok(())
}
