#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use pageslim::extract::{build_inventory, parse_document, NetworkLog};
use pageslim::model::{
    CanonicalUrl, Category, ContentHash, Criticality, ElementId, Parent, ScriptElement, ScriptKind,
};
use rand::Rng;
use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn url(s: &str) -> CanonicalUrl {
    CanonicalUrl::parse(s).unwrap()
}

#[derive(Debug, Deserialize)]
pub struct LabeledElement {
    pub kind: String,
    pub src: Option<String>,
    pub parents: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Labels {
    pub index_url: String,
    pub elements: Vec<LabeledElement>,
}

pub struct Page {
    pub name: String,
    pub html: Vec<u8>,
    pub index_url: CanonicalUrl,
    pub log: NetworkLog,
    pub bodies: BTreeMap<CanonicalUrl, Vec<u8>>,
    pub labels: Labels,
}

pub fn load_page(dir: &Path) -> Page {
    let html = std::fs::read(dir.join("index.html")).unwrap();
    let log = NetworkLog::read_jsonl(std::io::BufReader::new(std::fs::File::open(dir.join("log.jsonl")).unwrap())).unwrap();
    let raw: BTreeMap<String, String> =
        serde_json::from_slice(&std::fs::read(dir.join("bodies.json")).unwrap()).unwrap();
    let bodies = raw.into_iter().map(|(k, v)| (url(&k), v.into_bytes())).collect();
    let labels: Labels = serde_json::from_slice(&std::fs::read(dir.join("labels.json")).unwrap()).unwrap();
    Page {
        name: dir.file_name().unwrap().to_string_lossy().into_owned(),
        index_url: url(&labels.index_url),
        html,
        log,
        bodies,
        labels,
    }
}

pub fn all_pages() -> Vec<Page> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(fixtures().join("pages"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_page(d)).collect()
}

/// (kind, src, parents) in the label vocabulary.
pub fn describe(e: &ScriptElement, all: &[ScriptElement]) -> (String, Option<String>, Vec<String>) {
    let parents = e
        .parents
        .iter()
        .map(|p| match p {
            Parent::Document => "document".to_owned(),
            Parent::Element(id) => {
                let parent = all.iter().find(|x| &x.id == id).expect("parent in inventory");
                parent.src.as_ref().expect("only fetched scripts initiate fetches").to_string()
            }
            Parent::Unresolved(u) => format!("unresolved:{u}"),
        })
        .collect();
    (e.kind.to_string(), e.src.as_ref().map(|s| s.to_string()), parents)
}

pub fn label_tuples(page: &Page) -> Vec<(String, Option<String>, Vec<String>)> {
    page.labels
        .elements
        .iter()
        .map(|e| (e.kind.clone(), e.src.clone(), e.parents.clone()))
        .collect()
}

pub fn inventory(page: &Page) -> Vec<ScriptElement> {
    let doc = parse_document(&page.html, &page.index_url);
    build_inventory(&doc, &page.index_url, &page.log, &page.bodies).elements
}

/// A bare element for graph tests: node `i` with the given parent nodes.
pub fn node(i: usize, parents: &[usize], criticality: Criticality) -> ScriptElement {
    let kind = if parents.is_empty() { ScriptKind::External } else { ScriptKind::Recursive };
    ScriptElement {
        id: node_id(i),
        kind,
        src: Some(url(&format!("https://g.test/n{i}.js"))),
        doc_range: None,
        content_hash: ContentHash::of(b""),
        byte_size: 0,
        category: Category::Unknown,
        confidence: 0.0,
        criticality,
        parents: parents.iter().map(|&p| Parent::Element(node_id(p))).collect(),
        body_missing: false,
        content: None,
    }
}

pub fn node_id(i: usize) -> ElementId {
    ElementId::new(format!("n{i:02}"))
}

/// Random DAG over `n` nodes, edges only from lower to higher index.
/// Returns per-node parent lists.
pub fn random_dag(rng: &mut impl Rng, n: usize) -> Vec<Vec<usize>> {
    let density: f64 = rng.random_range(0.05..0.5);
    (0..n)
        .map(|c| (0..c).filter(|_| rng.random_bool(density)).collect())
        .collect()
}

/// `reach[a][b]`: a path of one or more edges leads from `a` to `b`.
pub fn reachability(parents: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = parents.len();
    let mut reach = vec![vec![false; n]; n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            reach[p][c] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

/// A static site that counts every request it receives.
pub struct Origin {
    pub addr: SocketAddr,
    pub hits: Arc<AtomicUsize>,
    _task: tokio::task::JoinHandle<()>,
}

type Site = Arc<(HashMap<String, (&'static str, Vec<u8>)>, Arc<AtomicUsize>)>;

async fn origin_handler(State(site): State<Site>, uri: Uri) -> Response {
    site.1.fetch_add(1, Ordering::SeqCst);
    let key = uri.path_and_query().map(|p| p.as_str().to_owned()).unwrap_or_default();
    match site.0.get(&key) {
        Some((ct, body)) => ([(header::CONTENT_TYPE, *ct)], body.clone()).into_response(),
        None => (StatusCode::NOT_FOUND, "not here").into_response(),
    }
}

impl Origin {
    pub async fn start(files: Vec<(&str, &'static str, Vec<u8>)>) -> Origin {
        let hits = Arc::new(AtomicUsize::new(0));
        let map = files.into_iter().map(|(p, ct, b)| (p.to_owned(), (ct, b))).collect();
        let site: Site = Arc::new((map, hits.clone()));
        let app = axum::Router::new().fallback(origin_handler).with_state(site);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let task = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Origin { addr, hits, _task: task }
    }

    pub fn url(&self, path: &str) -> CanonicalUrl {
        url(&format!("http://{}{}", self.addr, path))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// A small site: index, stylesheet, two scripts, images, a font and one
/// missing script. Paths map to (content type, body).
pub fn fixture_site() -> Vec<(&'static str, &'static str, Vec<u8>)> {
    let logo: Vec<u8> = (0..=255u8).cycle().take(1500).collect();
    vec![
        (
            "/",
            "text/html; charset=utf-8",
            br#"<!doctype html><html><head><link rel="stylesheet" href="/css/site.css">
<script src="/js/lib.js?v=1"></script></head>
<body><h1>Fixture</h1><img src="/img/logo.png" alt="logo">
<script>document.querySelector('h1').textContent += '!';</script>
<script src="/js/app.js"></script><script src="/js/missing.js"></script></body></html>
"#
            .to_vec(),
        ),
        ("/css/site.css", "text/css", b"@font-face{src:url(/fonts/f.woff2)} body{background:url('../img/bg.png')}".to_vec()),
        ("/js/lib.js?v=1", "application/javascript", b"window.lib = {v: 1};".to_vec()),
        ("/js/app.js", "application/javascript", b"document.body.appendChild(document.createElement('p'));".to_vec()),
        ("/img/logo.png", "image/png", logo),
        ("/img/bg.png", "image/png", vec![0x89, b'P', b'N', b'G', 0, 0, 0xff, 0xfe]),
        ("/fonts/f.woff2", "font/woff2", b"wOF2\x00\x01\x02".to_vec()),
    ]
}
