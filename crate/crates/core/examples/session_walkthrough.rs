//! Drives the session HTTP API the way the review UI does: create a
//! session, toggle a script, apply, read the report and save.
//!
//!     cargo run --example session_walkthrough

use std::path::PathBuf;
use std::sync::Arc;

use pageslim::proxy::{import_har, SnapshotStore};
use pageslim::session::{http, SessionManager};
use serde_json::{json, Value};

async fn call(client: &reqwest::Client, method: &str, url: String, body: Option<Value>) -> Result<Value, reqwest::Error> {
    let req = match method {
        "POST" => client
            .post(url)
            .header("content-type", "application/json")
            .body(body.unwrap_or(Value::Null).to_string()),
        _ => client.get(url),
    };
    let bytes = req.send().await?.bytes().await?;
    Ok(serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let work = tempfile::tempdir()?;
    let store = Arc::new(SnapshotStore::open(work.path().join("store"))?);
    let har = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/budget.har");
    let (snapshot, _) = import_har(har, &store)?;

    let manager = Arc::new(SessionManager::new(store).with_state_dir(work.path().join("state")));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let api = format!("http://{}", listener.local_addr()?);
    let app = http::router(manager, None);
    tokio::spawn(async move { axum::serve(listener, app).await });
    let client = reqwest::Client::builder().no_proxy().build()?;

    let state = call(&client, "POST", format!("{api}/sessions"), Some(json!({"snapshotId": snapshot}))).await?;
    let sid = state["sessionId"].as_str().unwrap().to_owned();
    println!("session {sid}, revision {}", state["revision"]);
    for e in state["elements"].as_array().unwrap() {
        let on = state["selection"][e["id"].as_str().unwrap()].as_bool().unwrap();
        println!("  [{}] {:<12} {}", if on { "x" } else { " " }, e["category"].as_str().unwrap(), e["label"].as_str().unwrap());
    }

    // disable the tag manager; the delta lists every script that changed with it
    let gtm = state["elements"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["label"].as_str().unwrap().contains("gtm.js"))
        .unwrap()["id"]
        .clone();
    let toggled = call(
        &client,
        "POST",
        format!("{api}/sessions/{sid}/toggle"),
        Some(json!({"elementId": gtm, "enabled": false, "revision": state["revision"]})),
    )
    .await?;
    println!("disable gtm.js -> revision {}, delta {}", toggled["revision"], toggled["delta"]);

    let applied = call(&client, "POST", format!("{api}/sessions/{sid}/apply"), Some(json!({"revision": toggled["revision"]}))).await?;
    println!("previews: {}", applied["previews"]);

    let report = call(&client, "GET", format!("{api}/sessions/{sid}/report"), None).await?;
    println!("reduction: {}", report["reduction"]);

    let out = work.path().join("out");
    let saved = call(&client, "POST", format!("{api}/sessions/{sid}/save"), Some(json!({"outDir": out}))).await?;
    println!("saved: {saved}");
    Ok(())
}
