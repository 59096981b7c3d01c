//! Builds a small dependency graph and shows how enabling or disabling one
//! script drags its ancestors or descendants along.
//!
//!     cargo run --example closure

use pageslim::depgraph::{default_selection, disable_closure, enable_closure, promote_criticality, DependencyGraph};
use pageslim::model::{
    normalize_url, Category, ContentHash, Criticality, ElementId, Parent, ScriptElement, ScriptKind, Selection,
};

fn script(name: &str, parents: &[&str], criticality: Criticality) -> ScriptElement {
    ScriptElement {
        id: ElementId::new(name),
        kind: if parents.is_empty() { ScriptKind::External } else { ScriptKind::Recursive },
        src: Some(normalize_url(&format!("https://example.test/{name}.js"), None).unwrap()),
        doc_range: None,
        content_hash: ContentHash::of(name.as_bytes()),
        byte_size: 0,
        category: Category::Unknown,
        confidence: 0.0,
        criticality,
        parents: parents.iter().map(|p| Parent::Element(ElementId::new(*p))).collect(),
        body_missing: false,
        content: None,
    }
}

fn show(label: &str, sel: &Selection) {
    let on: Vec<&str> = sel.iter().filter(|(_, on)| *on).map(|(id, _)| id.as_str()).collect();
    println!("{label:<28} enabled: {on:?}");
}

fn main() {
    use Criticality::*;
    // tag manager loads a widget loader, which loads a widget; the widget
    // draws content, so its loaders are promoted
    let mut elements = vec![
        script("gtm", &[], NonCritical),
        script("loader", &["gtm"], NonCritical),
        script("widget", &["loader"], Critical),
        script("pixel", &["gtm"], NonCritical),
        script("ads", &[], NonCritical),
    ];
    let graph = DependencyGraph::build(&elements);
    println!("edges: {:?}", graph.edges().iter().map(|(p, c)| format!("{p}->{c}")).collect::<Vec<_>>());
    println!("groups: {:?}", graph.groups());

    let promoted = promote_criticality(&graph, &mut elements);
    println!("promoted: {promoted:?}");

    let sel = default_selection(&elements);
    show("default", &sel);
    let sel = enable_closure(&graph, &sel, &ElementId::new("pixel")).unwrap();
    show("enable pixel", &sel);
    let sel = disable_closure(&graph, &sel, &ElementId::new("gtm")).unwrap();
    show("disable gtm", &sel);
    assert!(graph.is_closure_consistent(&sel));
}
