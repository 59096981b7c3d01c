//! Fetch-dependency graph over script elements.
//!
//! An edge `parent -> child` means the parent's execution requested the
//! child. Enabling an element enables everything above it; disabling one
//! disables everything below it, so no enabled script ever waits on a
//! disabled parent.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Criticality, ElementId, ScriptElement, Selection};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("profile edge line {line}: {message}")]
    ProfileLine { line: usize, message: String },
}

#[derive(Debug, Clone, Default)]
pub struct DependencyGraph {
    nodes: Vec<ElementId>,
    index: HashMap<ElementId, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    warnings: Vec<String>,
}

/// An extra edge from a CPU-profile style source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProfileEdge {
    pub parent_id: ElementId,
    pub child_id: ElementId,
    #[serde(default = "profile_source")]
    pub source: String,
}

fn profile_source() -> String {
    "profile".to_owned()
}

pub fn read_profile_edges(reader: impl BufRead) -> Result<Vec<ProfileEdge>, GraphError> {
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |message: String| GraphError::ProfileLine { line: i + 1, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        edges.push(serde_json::from_str(&line).map_err(|e| err(e.to_string()))?);
    }
    Ok(edges)
}

impl DependencyGraph {
    /// One node per element, one edge per parent that resolves to another
    /// element. Edges are added in inventory order and any edge that would
    /// close a cycle is dropped with a warning.
    pub fn build(elements: &[ScriptElement]) -> Self {
        let mut g = DependencyGraph::with_nodes(elements.iter().map(|e| e.id.clone()));
        for e in elements {
            for pid in e.parent_ids() {
                g.add_edge_checked(pid, &e.id);
            }
        }
        g
    }

    pub fn with_nodes(ids: impl IntoIterator<Item = ElementId>) -> Self {
        let mut g = DependencyGraph::default();
        for id in ids {
            if g.index.contains_key(&id) {
                continue;
            }
            g.index.insert(id.clone(), g.nodes.len());
            g.nodes.push(id);
            g.children.push(Vec::new());
            g.parents.push(Vec::new());
        }
        g
    }

    /// Adds `parent -> child` unless an endpoint is unknown or the edge
    /// would create a cycle. Returns whether the edge is present afterwards.
    pub fn add_edge_checked(&mut self, parent: &ElementId, child: &ElementId) -> bool {
        let (Some(&p), Some(&c)) = (self.index.get(parent), self.index.get(child)) else {
            let missing = if self.index.contains_key(parent) { child } else { parent };
            self.warnings
                .push(format!("edge {parent} -> {child} skipped: {missing} not in inventory"));
            return false;
        };
        if self.children[p].contains(&c) {
            return true;
        }
        if p == c || self.reaches(c, p) {
            self.warnings
                .push(format!("edge {parent} -> {child} dropped: it would close a cycle"));
            return false;
        }
        self.children[p].push(c);
        self.parents[c].push(p);
        true
    }

    pub fn add_profile_edges(&mut self, edges: &[ProfileEdge]) {
        for e in edges {
            self.add_edge_checked(&e.parent_id, &e.child_id);
        }
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(&self.children[n]);
        }
        false
    }

    pub fn nodes(&self) -> &[ElementId] {
        &self.nodes
    }

    pub fn contains(&self, id: &ElementId) -> bool {
        self.index.contains_key(id)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn edges(&self) -> Vec<(ElementId, ElementId)> {
        let mut out: Vec<_> = self
            .children
            .iter()
            .enumerate()
            .flat_map(|(p, cs)| cs.iter().map(move |&c| (p, c)))
            .map(|(p, c)| (self.nodes[p].clone(), self.nodes[c].clone()))
            .collect();
        out.sort();
        out
    }

    fn idx(&self, id: &ElementId) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownElement(id.clone()))
    }

    fn walk(&self, start: usize, next: &[Vec<usize>]) -> BTreeSet<ElementId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = next[start].clone();
        let mut out = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            out.insert(self.nodes[n].clone());
            stack.extend(&next[n]);
        }
        out
    }

    /// Transitive parents, excluding `id` itself.
    pub fn ancestors(&self, id: &ElementId) -> Result<BTreeSet<ElementId>, GraphError> {
        Ok(self.walk(self.idx(id)?, &self.parents))
    }

    /// Transitive children, excluding `id` itself.
    pub fn descendants(&self, id: &ElementId) -> Result<BTreeSet<ElementId>, GraphError> {
        Ok(self.walk(self.idx(id)?, &self.children))
    }

    /// Connected components ignoring edge direction. Members are sorted by
    /// id and groups by their smallest member.
    pub fn groups(&self) -> Vec<Vec<ElementId>> {
        let n = self.nodes.len();
        let mut uf: Vec<usize> = (0..n).collect();
        fn find(uf: &mut [usize], mut x: usize) -> usize {
            while uf[x] != x {
                uf[x] = uf[uf[x]];
                x = uf[x];
            }
            x
        }
        for (p, cs) in self.children.iter().enumerate() {
            for &c in cs {
                let (a, b) = (find(&mut uf, p), find(&mut uf, c));
                if a != b {
                    uf[a] = b;
                }
            }
        }
        let mut by_root: BTreeMap<usize, Vec<ElementId>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut uf, i);
            by_root.entry(r).or_default().push(self.nodes[i].clone());
        }
        let mut groups: Vec<Vec<ElementId>> = by_root
            .into_values()
            .map(|mut g| {
                g.sort();
                g
            })
            .collect();
        groups.sort_by(|a, b| a[0].cmp(&b[0]));
        groups
    }

    /// Parents before children.
    pub fn topological_order(&self) -> Vec<ElementId> {
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(self.nodes[v].clone());
            for &c in &self.children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        debug_assert_eq!(order.len(), n, "graph is acyclic by construction");
        order
    }

    /// No enabled element has a disabled parent.
    pub fn is_closure_consistent(&self, sel: &Selection) -> bool {
        self.children.iter().enumerate().all(|(p, cs)| {
            cs.iter()
                .all(|&c| !sel.is_enabled(&self.nodes[c]) || sel.is_enabled(&self.nodes[p]))
        })
    }
}

/// Enables `target` and every ancestor; nothing else changes.
pub fn enable_closure(
    graph: &DependencyGraph,
    sel: &Selection,
    target: &ElementId,
) -> Result<Selection, GraphError> {
    let mut out = sel.clone();
    for id in graph.ancestors(target)?.iter().chain([target]) {
        out.set(id, true)
            .map_err(|_| GraphError::UnknownElement(id.clone()))?;
    }
    Ok(out)
}

/// Disables `target` and every descendant; nothing else changes.
pub fn disable_closure(
    graph: &DependencyGraph,
    sel: &Selection,
    target: &ElementId,
) -> Result<Selection, GraphError> {
    let mut out = sel.clone();
    for id in graph.descendants(target)?.iter().chain([target]) {
        out.set(id, false)
            .map_err(|_| GraphError::UnknownElement(id.clone()))?;
    }
    Ok(out)
}

/// Marks every ancestor of a critical element critical. Never demotes.
/// Returns the ids that changed.
pub fn promote_criticality(
    graph: &DependencyGraph,
    elements: &mut [ScriptElement],
) -> Vec<ElementId> {
    let pos: HashMap<ElementId, usize> = elements
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.clone(), i))
        .collect();
    let mut promoted = Vec::new();
    // children first, so one pass reaches the fixpoint
    for id in graph.topological_order().iter().rev() {
        let Some(&i) = pos.get(id) else { continue };
        if elements[i].criticality == Criticality::Critical {
            continue;
        }
        let gi = graph.index[id];
        let has_critical_child = graph.children[gi].iter().any(|&c| {
            pos.get(&graph.nodes[c])
                .is_some_and(|&ci| elements[ci].criticality == Criticality::Critical)
        });
        if has_critical_child {
            elements[i].criticality = Criticality::Critical;
            promoted.push(id.clone());
        }
    }
    promoted
}

/// Enabled iff critical.
pub fn default_selection(elements: &[ScriptElement]) -> Selection {
    Selection::from_map(
        elements
            .iter()
            .map(|e| (e.id.clone(), e.criticality == Criticality::Critical))
            .collect(),
    )
}

/// Completes a partial user selection and repairs it into a
/// closure-consistent one.
///
/// Unlisted elements take their default. Listed disables are applied with
/// their closure first, then listed enables, so an explicit enable wins over
/// a conflicting disable of one of its ancestors. Returns the selection and
/// the listed elements whose requested state had to change.
pub fn repair_selection(
    graph: &DependencyGraph,
    elements: &[ScriptElement],
    requested: &BTreeMap<ElementId, bool>,
) -> Result<(Selection, Vec<ElementId>), GraphError> {
    let mut sel = default_selection(elements);
    for id in requested.keys() {
        if !graph.contains(id) {
            return Err(GraphError::UnknownElement(id.clone()));
        }
    }
    for (id, _) in requested.iter().filter(|(_, &on)| !on) {
        sel = disable_closure(graph, &sel, id)?;
    }
    for (id, _) in requested.iter().filter(|(_, &on)| on) {
        sel = enable_closure(graph, &sel, id)?;
    }
    // defaults of unlisted elements may still strand a child; enables win
    for id in graph.topological_order().iter().rev() {
        if sel.is_enabled(id) {
            sel = enable_closure(graph, &sel, id)?;
        }
    }
    let repaired = requested
        .iter()
        .filter(|(id, &want)| sel.get(id) != Some(want))
        .map(|(id, _)| id.clone())
        .collect();
    Ok((sel, repaired))
}
