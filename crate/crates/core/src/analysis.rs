//! The default pipeline: extract, classify, build the graph, promote, select.

use serde::Serialize;
use thiserror::Error;

use crate::classify::{classify_all, Preferences, RuleSet};
use crate::depgraph::{default_selection, promote_criticality, DependencyGraph, ProfileEdge};
use crate::extract::{build_inventory, parse_document, BodySource, NetworkLog};
use crate::model::{
    ByteRange, CanonicalUrl, Category, Criticality, ElementId, Parent, ScriptElement, ScriptKind, Selection,
    SnapshotId,
};
use crate::proxy::{SnapshotStore, StoreError, StoredSnapshot};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("reading index body: {0}")]
    Index(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// Classified and promoted, in document order then log order.
    pub elements: Vec<ScriptElement>,
    pub graph: DependencyGraph,
    pub selection: Selection,
    pub promoted: Vec<ElementId>,
    pub warnings: Vec<String>,
}

pub fn analyze(
    index_bytes: &[u8],
    index_url: &CanonicalUrl,
    log: &NetworkLog,
    bodies: &dyn BodySource,
    rules: &RuleSet,
    prefs: &Preferences,
    profile_edges: &[ProfileEdge],
) -> Analysis {
    let doc = parse_document(index_bytes, index_url);
    let inventory = build_inventory(&doc, index_url, log, bodies);
    let mut elements = inventory.elements;
    classify_all(&mut elements, rules, prefs);
    let mut graph = DependencyGraph::build(&elements);
    graph.add_profile_edges(profile_edges);
    let promoted = promote_criticality(&graph, &mut elements);
    let selection = default_selection(&elements);
    let mut warnings = inventory.warnings;
    warnings.extend(graph.warnings().iter().cloned());
    Analysis {
        elements,
        graph,
        selection,
        promoted,
        warnings,
    }
}

/// Runs [`analyze`] over a stored snapshot and its network log.
pub fn analyze_snapshot(
    store: &SnapshotStore,
    id: &SnapshotId,
    rules: &RuleSet,
    prefs: &Preferences,
) -> Result<(StoredSnapshot, Analysis), AnalysisError> {
    let snap = store.open_snapshot(id)?;
    let log = match store.read_log(id)? {
        Some(log) => log,
        None => NetworkLog::from_snapshot(&snap.snapshot),
    };
    let index = snap.index_bytes().map_err(AnalysisError::Index)?;
    let analysis = analyze(&index, &snap.snapshot.index_url, &log, &snap, rules, prefs, &[]);
    Ok((snap, analysis))
}

/// Element summary for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ElementView {
    pub id: ElementId,
    pub kind: ScriptKind,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub src: Option<CanonicalUrl>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_range: Option<ByteRange>,
    pub category: Category,
    pub confidence: f64,
    pub criticality: Criticality,
    pub byte_size: u64,
    pub parents: Vec<Parent>,
}

impl From<&ScriptElement> for ElementView {
    fn from(e: &ScriptElement) -> Self {
        ElementView {
            id: e.id.clone(),
            kind: e.kind,
            label: e.label(),
            src: e.src.clone(),
            doc_range: e.doc_range,
            category: e.category,
            confidence: e.confidence,
            criticality: e.criticality,
            byte_size: e.byte_size,
            parents: e.parents.clone(),
        }
    }
}

/// Element views sorted by id, for stable output.
pub fn sorted_views(elements: &[ScriptElement]) -> Vec<ElementView> {
    let mut views: Vec<ElementView> = elements.iter().map(ElementView::from).collect();
    views.sort_by(|a, b| a.id.cmp(&b.id));
    views
}
