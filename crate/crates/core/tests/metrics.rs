mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use common::*;
use pageslim::extract::is_javascript;
use pageslim::metrics::{diff, render_table, resource_metrics, structural_similarity, visible_content, Reduction};
use pageslim::model::{CanonicalUrl, Snapshot};
use pageslim::proxy::{import_har, SnapshotStore};
use proptest::prelude::*;

fn budget() -> &'static Snapshot {
    static SNAP: OnceLock<Snapshot> = OnceLock::new();
    SNAP.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        let (id, _) = import_har(fixtures().join("budget.har"), &store).unwrap();
        store.load(&id).unwrap()
    })
}

fn pick(mask: u64) -> BTreeSet<CanonicalUrl> {
    budget()
        .resources
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, r)| r.url.clone())
        .collect()
}

#[test]
fn nothing_blocked_is_the_full_snapshot() {
    let snap = budget();
    let card = resource_metrics(snap, &BTreeSet::new(), b"");
    assert_eq!(card.request_count as usize, snap.resources.len());
    assert_eq!(card.total_bytes, snap.resources.iter().map(|r| r.body_length).sum::<u64>());
    assert_eq!(card.js_request_count, 20);
}

#[test]
fn all_js_blocked() {
    let snap = budget();
    let js: BTreeSet<_> = snap
        .resources
        .iter()
        .filter(|r| is_javascript(&r.media_type, &r.url))
        .map(|r| r.url.clone())
        .collect();
    let full = resource_metrics(snap, &BTreeSet::new(), b"");
    let none = resource_metrics(snap, &js, b"");
    assert_eq!((none.js_bytes, none.js_request_count), (0, 0));
    assert_eq!(none.total_bytes, full.total_bytes - full.js_bytes);
    assert_eq!(none.request_count, full.request_count - full.js_request_count);
}

#[test]
fn reductions_and_table() {
    let snap = budget();
    let full = resource_metrics(snap, &BTreeSet::new(), b"<script></script>");
    let d = diff(&full, &full);
    assert_eq!(d.total_bytes, Reduction::Tenths(0));
    let empty = resource_metrics(snap, &BTreeSet::new(), b"");
    assert_eq!(diff(&empty, &empty).script_tag_count, Reduction::NotApplicable);
    let table = render_table(&full, &empty);
    assert!(table.contains("script tags"));
    assert!(table.contains("100.0%"));
    assert!(table.contains("not transfer sizes"));
}

#[test]
fn similarity_examples() {
    let page = b"<html><body><h1>News today</h1><p>Some text here.</p><img src=a.png><img src=b.png></body></html>";
    let no_scripts = b"<html><body><h1>News today</h1><p>Some text here.</p><img src=a.png><img src=b.png></body></html><script>x()</script>";
    assert_eq!(structural_similarity(page, page), 1.0);
    assert_eq!(structural_similarity(page, no_scripts), 1.0);
    // 2 of 4 images kept, text intact: Jaccard of media sets is 2/4
    let four = b"<p>t</p><img src=1.png><img src=2.png><img src=3.png><img src=4.png>";
    let two = b"<p>t</p><img src=1.png><img src=2.png>";
    assert_eq!(structural_similarity(four, two), 0.5 + 0.5 * (2.0 / 4.0));
    let a = visible_content(page);
    assert_eq!(a.text_tokens.get("news"), Some(&1));
    assert_eq!(a.media.len(), 2);
}

proptest! {
    #[test]
    fn monotone_and_conserving(a in any::<u64>(), b in any::<u64>()) {
        let snap = budget();
        let small = pick(a & b);
        let large = pick(a);
        let cs = resource_metrics(snap, &small, b"");
        let cl = resource_metrics(snap, &large, b"");
        prop_assert!(cl.request_count <= cs.request_count);
        prop_assert!(cl.total_bytes <= cs.total_bytes);
        prop_assert!(cl.js_request_count <= cs.js_request_count);
        prop_assert!(cl.js_bytes <= cs.js_bytes);
        prop_assert!(cl.js_bytes <= cl.total_bytes && cl.js_request_count <= cl.request_count);

        let full = resource_metrics(snap, &BTreeSet::new(), b"");
        let blocked_bytes: u64 = snap.resources.iter().filter(|r| large.contains(&r.url)).map(|r| r.body_length).sum();
        prop_assert_eq!(cl.total_bytes + blocked_bytes, full.total_bytes);
    }

    #[test]
    fn reduction_matches_float(before in 1u64..1_000_000, after in 0u64..1_000_000) {
        let got = Reduction::between(before, after).percent().unwrap();
        let exact = 100.0 * (before as f64 - after as f64) / before as f64;
        prop_assert!((got - exact).abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn similarity_symmetric_and_bounded(
        words_a in proptest::collection::vec("[a-c]{1,2}", 0..8),
        words_b in proptest::collection::vec("[a-c]{1,2}", 0..8),
        imgs_a in proptest::collection::btree_set("[1-4]", 0..4),
        imgs_b in proptest::collection::btree_set("[1-4]", 0..4),
    ) {
        let page = |w: &[String], i: &BTreeSet<String>| {
            let imgs: String = i.iter().map(|s| format!("<img src={s}.png>")).collect();
            format!("<p>{}</p>{imgs}", w.join(" ")).into_bytes()
        };
        let (x, y) = (page(&words_a, &imgs_a), page(&words_b, &imgs_b));
        let s = structural_similarity(&x, &y);
        prop_assert_eq!(s, structural_similarity(&y, &x));
        prop_assert!((0.0..=1.0).contains(&s));
        let (va, vb) = (visible_content(&x), visible_content(&y));
        prop_assert_eq!(s == 1.0, va == vb);
    }
}
