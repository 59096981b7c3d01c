//! The `pageslim` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 the simplified
//! page failed verification.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{analyze_snapshot, sorted_views, Analysis, ElementView};
use crate::classify::{Preferences, RuleSet};
use crate::depgraph::{read_profile_edges, repair_selection, DependencyGraph};
use crate::metrics::{diff, render_table, resource_metrics, structural_similarity};
use crate::model::{normalize_url, CanonicalUrl, ElementId, Selection, SnapshotId};
use crate::proxy::{self, DepthPolicy, ServeMode, SnapshotStore, StoredSnapshot, StubPolicy};
use crate::rewrite::{simplify, verify_simplification, SimplifyOptions};
use crate::session::{http, save_artifacts, SessionManager, BYTES_NOTE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pageslim", version, about = "Inventory, classify and strip non-critical JavaScript from captured pages")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Replay,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StubArg {
    EmptyJs,
    Forbidden,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// Category rule table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Category criticality preferences.
    #[arg(long)]
    pub prefs: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch a page and its static subresources into the store.
    Capture {
        url: String,
        #[arg(long, alias = "store")]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_depth: u32,
        #[arg(long, default_value_t = 500)]
        max_resources: usize,
    },
    /// Import a HAR 1.2 archive into the store.
    ImportHar {
        file: PathBuf,
        #[arg(long, alias = "store")]
        out: PathBuf,
    },
    /// List script elements, dependency groups and the default selection.
    Analyze {
        snapshot_id: String,
        #[arg(long, default_value = "store")]
        store: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Extra dependency edges, JSON lines {parentId, childId}.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Write the simplified page, block report and metrics.
    Simplify {
        snapshot_id: String,
        #[arg(long, default_value = "store")]
        store: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// JSON map {elementId: enabled}; unlisted elements keep their default.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a snapshot over HTTP.
    Serve {
        snapshot_id: String,
        #[arg(long, default_value = "store")]
        store: PathBuf,
        #[arg(long, value_enum, default_value = "replay")]
        mode: ModeArg,
        /// URLs to block, one per line.
        #[arg(long)]
        blocklist: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "empty-js")]
        stub: StubArg,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Run the interactive session API.
    Session {
        #[arg(long, default_value = "store")]
        store: PathBuf,
        #[arg(long, default_value_t = 8070)]
        port: u16,
        /// Directory holding a built UI bundle to host.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Before/after resource table for a selection.
    Report {
        snapshot_id: String,
        #[arg(long, default_value = "store")]
        store: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with(args: impl IntoIterator<Item = String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match run(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Capture {
            url,
            out: store,
            max_depth,
            max_resources,
        } => {
            let url = normalize_url(&url, None).map_err(data)?;
            let store = SnapshotStore::open(&store).map_err(data)?;
            let policy = DepthPolicy { max_depth, max_resources };
            let id = runtime()?
                .block_on(proxy::capture(&store, &url, policy))
                .map_err(data)?;
            writeln!(out, "{id}").map_err(data)
        }
        Command::ImportHar { file, out: store } => {
            let store = SnapshotStore::open(&store).map_err(data)?;
            let (id, count) = proxy::import_har(&file, &store).map_err(data)?;
            writeln!(err, "imported {count} records").map_err(data)?;
            writeln!(out, "{id}").map_err(data)
        }
        Command::Analyze {
            snapshot_id,
            store,
            config,
            profile,
            json,
        } => {
            let (_, mut a) = load(&store, &snapshot_id, &config)?;
            if let Some(path) = profile {
                let file = std::fs::File::open(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
                let edges = read_profile_edges(std::io::BufReader::new(file)).map_err(data)?;
                a = rerun_with_profile(a, &edges);
            }
            for w in &a.warnings {
                writeln!(err, "warning: {w}").map_err(data)?;
            }
            if json {
                let rows = analyze_rows(&a);
                let mut s = serde_json::to_string_pretty(&rows).map_err(data)?;
                s.push('\n');
                out.write_all(s.as_bytes()).map_err(data)
            } else {
                write_analysis_table(&a, out).map_err(data)
            }
        }
        Command::Simplify {
            snapshot_id,
            store,
            config,
            selection,
            out: out_dir,
        } => {
            let (snap, a) = load(&store, &snapshot_id, &config)?;
            let sel = selection_for(&a, selection.as_deref(), err)?;
            let index = snap.index_bytes().map_err(data)?;
            let index_url = &snap.snapshot.index_url;
            let artifact =
                simplify(&index, index_url, &a.elements, &sel, SimplifyOptions::default()).map_err(data)?;
            let before = resource_metrics(&snap.snapshot, &BTreeSet::new(), &index);
            let after = resource_metrics(&snap.snapshot, &artifact.blocked_urls, &artifact.html_bytes);
            let paths = save_artifacts(&out_dir, &artifact, &before, &after).map_err(data)?;
            for p in [&paths.html, &paths.block_report, &paths.metrics_before, &paths.metrics_after] {
                writeln!(out, "{}", p.display()).map_err(data)?;
            }
            let v = verify_simplification(&index, index_url, &artifact, &a.elements, &sel);
            if !v.passed() {
                return Err(Failure {
                    code: EXIT_VERIFY,
                    message: format!("verification failed: {}", v.problems.join("; ")),
                });
            }
            Ok(())
        }
        Command::Serve {
            snapshot_id,
            store,
            mode,
            blocklist,
            stub,
            port,
        } => {
            let store = SnapshotStore::open(&store).map_err(data)?;
            let mode = match mode {
                ModeArg::Replay => ServeMode::Replay,
                ModeArg::Blocked => ServeMode::ReplayWithBlocklist {
                    blocked: match &blocklist {
                        Some(p) => read_blocklist(p)?,
                        None => BTreeSet::new(),
                    },
                    stub: match stub {
                        StubArg::EmptyJs => StubPolicy::EmptyJs,
                        StubArg::Forbidden => StubPolicy::Forbidden,
                    },
                },
            };
            let id = SnapshotId::new(snapshot_id);
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            runtime()?.block_on(async {
                let handle = proxy::serve(&store, &id, mode, addr).await.map_err(data)?;
                writeln!(out, "serving {} at {}", id, handle.index_url()).map_err(data)?;
                out.flush().map_err(data)?;
                let _ = tokio::signal::ctrl_c().await;
                handle.shutdown().await;
                Ok(())
            })
        }
        Command::Session { store, port, ui } => {
            let state_dir = store.join("sessions");
            let store = Arc::new(SnapshotStore::open(&store).map_err(data)?);
            let manager = Arc::new(SessionManager::new(store).with_state_dir(state_dir));
            let ui = ui.filter(|d| d.join("index.html").exists());
            runtime()?.block_on(async {
                let resumed = manager.resume().await.map_err(data)?;
                if !resumed.is_empty() {
                    writeln!(err, "resumed {} session(s)", resumed.len()).map_err(data)?;
                }
                let addr = SocketAddr::from(([127, 0, 0, 1], port));
                let listener = tokio::net::TcpListener::bind(addr).await.map_err(data)?;
                writeln!(out, "session API at http://{}", listener.local_addr().map_err(data)?).map_err(data)?;
                out.flush().map_err(data)?;
                axum::serve(listener, http::router(manager, ui))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(data)
            })
        }
        Command::Report {
            snapshot_id,
            store,
            config,
            selection,
            json,
        } => {
            let (snap, a) = load(&store, &snapshot_id, &config)?;
            let sel = selection_for(&a, selection.as_deref(), err)?;
            let index = snap.index_bytes().map_err(data)?;
            let artifact = simplify(&index, &snap.snapshot.index_url, &a.elements, &sel, SimplifyOptions::default())
                .map_err(data)?;
            let before = resource_metrics(&snap.snapshot, &BTreeSet::new(), &index);
            let after = resource_metrics(&snap.snapshot, &artifact.blocked_urls, &artifact.html_bytes);
            if json {
                let doc = serde_json::json!({
                    "before": before,
                    "after": after,
                    "reduction": diff(&before, &after),
                    "similarity": structural_similarity(&index, &artifact.html_bytes),
                    "note": BYTES_NOTE,
                });
                writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(data)?).map_err(data)
            } else {
                out.write_all(render_table(&before, &after).as_bytes()).map_err(data)
            }
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(data)
}

fn load(store: &Path, id: &str, config: &ConfigArgs) -> Result<(StoredSnapshot, Analysis), Failure> {
    if !store.join("manifest.sqlite").exists() {
        return Err(data(format!("no snapshot store at {}", store.display())));
    }
    let store = SnapshotStore::open(store).map_err(data)?;
    let rules = match &config.rules {
        Some(p) => RuleSet::load(p).map_err(data)?,
        None => RuleSet::default(),
    };
    let prefs = match &config.prefs {
        Some(p) => Preferences::load(p).map_err(data)?,
        None => Preferences::default(),
    };
    analyze_snapshot(&store, &SnapshotId::new(id), &rules, &prefs).map_err(data)
}

fn rerun_with_profile(mut a: Analysis, edges: &[crate::depgraph::ProfileEdge]) -> Analysis {
    let mut graph = DependencyGraph::build(&a.elements);
    graph.add_profile_edges(edges);
    a.warnings.extend(graph.warnings().iter().cloned());
    a.promoted.extend(crate::depgraph::promote_criticality(&graph, &mut a.elements));
    a.selection = crate::depgraph::default_selection(&a.elements);
    a.graph = graph;
    a
}

/// Default selection, or the file's partial map completed and repaired.
pub fn selection_for(a: &Analysis, path: Option<&Path>, err: &mut dyn Write) -> Result<Selection, Failure> {
    let Some(path) = path else { return Ok(a.selection.clone()) };
    let bytes = std::fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let requested: BTreeMap<ElementId, bool> =
        serde_json::from_slice(&bytes).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let (sel, repaired) = repair_selection(&a.graph, &a.elements, &requested).map_err(data)?;
    if !repaired.is_empty() {
        let ids: Vec<&str> = repaired.iter().map(ElementId::as_str).collect();
        writeln!(err, "warning: selection repaired for closure consistency: {}", ids.join(", ")).map_err(data)?;
    }
    Ok(sel)
}

fn read_blocklist(path: &Path) -> Result<BTreeSet<CanonicalUrl>, Failure> {
    let file = std::fs::File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeSet::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(data)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let url = normalize_url(line, None).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.insert(url);
    }
    Ok(out)
}

/// One `analyze --json` row: the element plus its default state and group.
#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalyzeRow {
    #[serde(flatten)]
    pub element: ElementView,
    pub enabled: bool,
    pub group: usize,
}

pub fn analyze_rows(a: &Analysis) -> Vec<AnalyzeRow> {
    let mut group_of = BTreeMap::new();
    for (i, g) in a.graph.groups().into_iter().enumerate() {
        for id in g {
            group_of.insert(id, i);
        }
    }
    sorted_views(&a.elements)
        .into_iter()
        .map(|v| AnalyzeRow {
            enabled: a.selection.is_enabled(&v.id),
            group: group_of[&v.id],
            element: v,
        })
        .collect()
}

fn write_analysis_table(a: &Analysis, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<16} {:<9} {:<18} {:>5} {:<11} {:<3} {:>5}  script",
        "id", "kind", "category", "conf", "criticality", "on", "group"
    )?;
    for row in analyze_rows(a) {
        let e = &row.element;
        writeln!(
            out,
            "{:<16} {:<9} {:<18} {:>5.2} {:<11} {:<3} {:>5}  {}",
            e.id.as_str(),
            e.kind.to_string(),
            e.category.name(),
            e.confidence,
            e.criticality.to_string(),
            if row.enabled { "yes" } else { "no" },
            row.group,
            e.src.as_ref().map_or_else(|| e.label.clone(), |s| s.to_string()),
        )?;
    }
    let enabled = a.selection.iter().filter(|(_, on)| *on).count();
    writeln!(
        out,
        "{} elements, {} groups, {} enabled by default",
        a.elements.len(),
        a.graph.groups().len(),
        enabled
    )
}
