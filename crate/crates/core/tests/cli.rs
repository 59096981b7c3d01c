mod common;

use std::path::Path;

use common::*;
use pageslim::cli::{main_with, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("pageslim").chain(args.iter().copied()).map(String::from);
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn import(store: &Path, har: &Path) -> String {
    let (code, out, err) = run(&["import-har", har.to_str().unwrap(), "--out", store.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    out.split_whitespace().find(|w| w.len() >= 8 && w.chars().all(|c| c.is_ascii_hexdigit() || c == '-')).unwrap().to_owned()
}

#[test]
fn simplify_writes_four_files() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let id = import(&store, &fixtures().join("budget.har"));
    let out = dir.path().join("out");
    let (code, _, err) = run(&["simplify", &id, "--store", store.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let mut names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["block_report.json", "metrics_after.json", "metrics_before.json", "simplified.html"]);
}

#[test]
fn analyze_json_rows() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let id = import(&store, &fixtures().join("budget.har"));
    let (code, out, _) = run(&["analyze", &id, "--store", store.to_str().unwrap(), "--json"]);
    assert_eq!(code, EXIT_OK);
    let rows: Vec<Value> = serde_json::from_str(&out).unwrap();
    assert!(rows.iter().all(|r| r["id"].is_string() && r["enabled"].is_boolean() && r["group"].is_u64()));
    assert_eq!(rows.iter().filter(|r| r["enabled"] == false).count(), 12);

    let (code, table, _) = run(&["analyze", &id, "--store", store.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(table.contains("gtm.js"));
}

#[test]
fn analyze_empty_page_prints_empty_array() {
    let dir = tempfile::tempdir().unwrap();
    let har = dir.path().join("plain.har");
    std::fs::write(
        &har,
        r#"{"log":{"entries":[{"request":{"url":"https://plain.test/"},"response":{"status":200,"content":{"mimeType":"text/html","text":"<p>hi</p>"}}}]}}"#,
    )
    .unwrap();
    let store = dir.path().join("store");
    let id = import(&store, &har);
    let (code, out, _) = run(&["analyze", &id, "--store", store.to_str().unwrap(), "--json"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.trim(), "[]");
}

#[test]
fn report_all_enabled_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let id = import(&store, &fixtures().join("budget.har"));
    let prefs = dir.path().join("keep.prefs");
    std::fs::write(&prefs, "Advertising=critical\nAnalytics=critical\nMarketing=critical\nTag Management=critical\nSocial=critical\n").unwrap();
    let s = store.to_str().unwrap();
    let p = prefs.to_str().unwrap();
    let (code, out, err) = run(&["report", &id, "--store", s, "--prefs", p]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.lines().skip(1).take(5).all(|l| l.ends_with(" 0.0%")), "{out}");

    let (_, json_out, _) = run(&["report", &id, "--store", s, "--prefs", p, "--json"]);
    let v: Value = serde_json::from_str(&json_out).unwrap();
    assert_eq!(v["reduction"]["totalBytes"], 0.0);
    assert_eq!(v["before"], v["after"]);
}

#[test]
fn selection_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let s = store.to_str().unwrap();
    let id = import(&store, &fixtures().join("budget.har"));
    let (_, out, _) = run(&["analyze", &id, "--store", s, "--json"]);
    let rows: Vec<Value> = serde_json::from_str(&out).unwrap();
    let all_on: serde_json::Map<String, Value> =
        rows.iter().map(|r| (r["id"].as_str().unwrap().to_owned(), Value::Bool(true))).collect();
    let sel = dir.path().join("sel.json");
    std::fs::write(&sel, Value::Object(all_on).to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let (code, _, err) = run(&["simplify", &id, "--store", s, "--selection", sel.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let stored = pageslim::proxy::SnapshotStore::open(&store).unwrap().open_snapshot(&pageslim::model::SnapshotId::new(id)).unwrap();
    assert_eq!(std::fs::read(out_dir.join("simplified.html")).unwrap(), stored.index_bytes().unwrap());
}

#[test]
fn exit_codes() {
    assert_eq!(run(&[]).0, EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(run(&["--help"]).0, EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("store");
    let (code, _, err) = run(&["analyze", "nope", "--store", s.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA);
    assert!(!err.is_empty());
    let (code, _, _) = run(&["import-har", "/no/such.har", "--out", s.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA);
}

#[tokio::test]
async fn capture_subcommand() {
    let origin = Origin::start(fixture_site()).await;
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let target = origin.url("/").to_string();
    let (code, out, err) = tokio::task::spawn_blocking(move || {
        run(&["capture", &target, "--out", store.to_str().unwrap(), "--max-depth", "1"])
    })
    .await
    .unwrap();
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(!out.trim().is_empty());
}
