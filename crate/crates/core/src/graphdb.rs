//! Rooted node-labeled graph databases and description bindings between an
//! instance graph and a meta-level graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::quoted;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// A tag plus attribute assignments. Attributes are kept as a list so that
/// duplicate names can be reported rather than silently merged.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeLabel {
    pub tag: String,
    pub attrs: Vec<(String, String)>,
}

impl NodeLabel {
    pub fn new(tag: impl Into<String>) -> Self {
        NodeLabel {
            tag: tag.into(),
            attrs: Vec::new(),
        }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.push((name.into(), value.into()));
        self
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(a, _)| a == name).map(|(_, v)| v.as_str())
    }

    pub fn has(&self, name: &str, value: &str) -> bool {
        self.attrs.iter().any(|(a, v)| a == name && v == value)
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag)?;
        for (a, v) in &self.attrs {
            write!(f, " {a}={}", quoted(v))?;
        }
        Ok(())
    }
}

/// `⟨V, r, lab, E⟩`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphDatabase {
    root: NodeId,
    labels: BTreeMap<NodeId, NodeLabel>,
    edges: BTreeSet<(NodeId, NodeId)>,
    succ: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl GraphDatabase {
    pub fn new(root: impl Into<NodeId>, label: NodeLabel) -> Self {
        let root = root.into();
        GraphDatabase {
            labels: BTreeMap::from([(root.clone(), label)]),
            root,
            edges: BTreeSet::new(),
            succ: BTreeMap::new(),
        }
    }

    /// Adds or relabels a node.
    pub fn add_node(&mut self, id: impl Into<NodeId>, label: NodeLabel) {
        self.labels.insert(id.into(), label);
    }

    /// Adds an edge; endpoints need not exist yet (validation reports them).
    pub fn add_edge(&mut self, from: impl Into<NodeId>, to: impl Into<NodeId>) {
        let (from, to) = (from.into(), to.into());
        self.succ.entry(from.clone()).or_default().insert(to.clone());
        self.edges.insert((from, to));
    }

    pub fn root(&self) -> &NodeId {
        &self.root
    }

    pub fn label(&self, n: &NodeId) -> Option<&NodeLabel> {
        self.labels.get(n)
    }

    pub fn tag(&self, n: &NodeId) -> Option<&str> {
        self.labels.get(n).map(|l| l.tag.as_str())
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, &NodeLabel)> {
        self.labels.iter()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.labels.keys()
    }

    pub fn contains(&self, n: &NodeId) -> bool {
        self.labels.contains_key(n)
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &(NodeId, NodeId)> {
        self.edges.iter()
    }

    pub fn has_edge(&self, from: &NodeId, to: &NodeId) -> bool {
        self.edges.contains(&(from.clone(), to.clone()))
    }

    pub fn successors(&self, n: &NodeId) -> impl Iterator<Item = &NodeId> {
        self.succ.get(n).into_iter().flatten()
    }

    /// True if the graph has no directed cycle.
    pub fn is_acyclic(&self) -> bool {
        let mut indeg: BTreeMap<&NodeId, usize> = self.labels.keys().map(|n| (n, 0)).collect();
        for (_, b) in &self.edges {
            *indeg.entry(b).or_default() += 1;
        }
        let mut ready: Vec<&NodeId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut seen = 0;
        while let Some(n) = ready.pop() {
            seen += 1;
            for m in self.successors(n) {
                let d = indeg.get_mut(m).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(m);
                }
            }
        }
        seen == indeg.len()
    }

    /// The subgraph induced by `keep`, which must contain the root.
    pub fn induced_subgraph(&self, keep: &BTreeSet<NodeId>) -> GraphDatabase {
        assert!(keep.contains(&self.root), "induced subgraph must keep the root");
        let mut g = GraphDatabase::new(self.root.clone(), self.labels[&self.root].clone());
        for (n, l) in &self.labels {
            if keep.contains(n) {
                g.add_node(n.clone(), l.clone());
            }
        }
        for (a, b) in &self.edges {
            if keep.contains(a) && keep.contains(b) {
                g.add_edge(a.clone(), b.clone());
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum GraphViolation {
    RootHasIncomingEdge { root: NodeId },
    AdditionalSource { node: NodeId },
    UnlabeledNode { node: NodeId },
    DuplicateAttribute { node: NodeId, attr: String },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::RootHasIncomingEdge { root } => write!(f, "root `{root}` has an incoming edge"),
            GraphViolation::AdditionalSource { node } => {
                write!(f, "node `{node}` has in-degree 0 but is not the root")
            }
            GraphViolation::UnlabeledNode { node } => write!(f, "edge endpoint `{node}` has no label"),
            GraphViolation::DuplicateAttribute { node, attr } => {
                write!(f, "node `{node}` assigns attribute `{attr}` more than once")
            }
        }
    }
}

/// Checks that the root is the unique node of in-degree 0, that every edge
/// endpoint is labeled, and that attribute names are unique per node.
pub fn validate_graph(g: &GraphDatabase) -> Vec<GraphViolation> {
    let mut out = BTreeSet::new();
    let mut has_incoming = BTreeSet::new();
    for (a, b) in &g.edges {
        has_incoming.insert(b);
        for n in [a, b] {
            if !g.contains(n) {
                out.insert(GraphViolation::UnlabeledNode { node: n.clone() });
            }
        }
    }
    for (n, label) in &g.labels {
        if n == &g.root {
            if has_incoming.contains(n) {
                out.insert(GraphViolation::RootHasIncomingEdge { root: n.clone() });
            }
        } else if !has_incoming.contains(n) {
            out.insert(GraphViolation::AdditionalSource { node: n.clone() });
        }
        let mut names = BTreeSet::new();
        for (a, _) in &label.attrs {
            if !names.insert(a) {
                out.insert(GraphViolation::DuplicateAttribute {
                    node: n.clone(),
                    attr: a.clone(),
                });
            }
        }
    }
    out.into_iter().collect()
}

/// A mapping `μ` from instance nodes to meta nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptionBinding {
    map: BTreeMap<NodeId, NodeId>,
}

impl DescriptionBinding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, inst: impl Into<NodeId>, meta: impl Into<NodeId>) {
        self.map.insert(inst.into(), meta.into());
    }

    pub fn get(&self, n: &NodeId) -> Option<&NodeId> {
        self.map.get(n)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &NodeId)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// The identity binding of a graph onto itself.
    pub fn identity(g: &GraphDatabase) -> Self {
        DescriptionBinding {
            map: g.node_ids().map(|n| (n.clone(), n.clone())).collect(),
        }
    }

    /// `outer ∘ self`: first `self`, then `outer`.
    pub fn then(&self, outer: &DescriptionBinding) -> DescriptionBinding {
        DescriptionBinding {
            map: self
                .map
                .iter()
                .filter_map(|(a, b)| outer.get(b).map(|c| (a.clone(), c.clone())))
                .collect(),
        }
    }

    pub fn restrict(&self, keep: &BTreeSet<NodeId>) -> DescriptionBinding {
        DescriptionBinding {
            map: self
                .map
                .iter()
                .filter(|(a, _)| keep.contains(*a))
                .map(|(a, b)| (a.clone(), b.clone()))
                .collect(),
        }
    }
}

impl FromIterator<(NodeId, NodeId)> for DescriptionBinding {
    fn from_iter<I: IntoIterator<Item = (NodeId, NodeId)>>(iter: I) -> Self {
        DescriptionBinding {
            map: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum BindingViolation {
    Unmapped {
        node: NodeId,
    },
    UnknownInstanceNode {
        node: NodeId,
    },
    UnknownMetaNode {
        node: NodeId,
        target: NodeId,
    },
    TagMismatch {
        node: NodeId,
        target: NodeId,
        tag: String,
        meta_tag: String,
    },
    EdgeNotPreserved {
        from: NodeId,
        to: NodeId,
    },
    AttributeConflict {
        node: NodeId,
        target: NodeId,
        attr: String,
        value: String,
        meta_value: String,
    },
    RootNotPreserved {
        root: NodeId,
        target: NodeId,
    },
}

impl fmt::Display for BindingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use BindingViolation::*;
        match self {
            Unmapped { node } => write!(f, "mu is undefined on `{node}`"),
            UnknownInstanceNode { node } => write!(f, "mu is defined on unknown node `{node}`"),
            UnknownMetaNode { node, target } => write!(f, "mu({node}) = `{target}` is not a meta node"),
            TagMismatch {
                node,
                target,
                tag,
                meta_tag,
            } => write!(
                f,
                "tag of `{node}` is `{tag}` but tag of mu({node}) = `{target}` is `{meta_tag}`"
            ),
            EdgeNotPreserved { from, to } => {
                write!(f, "edge ({from}, {to}) has no image edge on the meta level")
            }
            AttributeConflict {
                node,
                target,
                attr,
                value,
                meta_value,
            } => write!(
                f,
                "`{node}` has {attr}={} but mu({node}) = `{target}` has {attr}={}",
                quoted(value),
                quoted(meta_value)
            ),
            RootNotPreserved { root, target } => {
                write!(f, "mu maps root `{root}` to `{target}`, which is not the meta root")
            }
        }
    }
}

/// Checks that `mu` is total, tag-preserving and edge-preserving. Strict
/// mode additionally requires agreeing values for attributes assigned on
/// both levels and that the root is mapped to the meta root.
pub fn check_description_binding(
    i: &GraphDatabase,
    m: &GraphDatabase,
    mu: &DescriptionBinding,
    strict: bool,
) -> Vec<BindingViolation> {
    let mut out = BTreeSet::new();
    for (n, t) in mu.iter() {
        if !i.contains(n) {
            out.insert(BindingViolation::UnknownInstanceNode { node: n.clone() });
        }
        if !m.contains(t) {
            out.insert(BindingViolation::UnknownMetaNode {
                node: n.clone(),
                target: t.clone(),
            });
        }
    }
    for (n, label) in i.nodes() {
        let Some(t) = mu.get(n) else {
            out.insert(BindingViolation::Unmapped { node: n.clone() });
            continue;
        };
        let Some(meta_label) = m.label(t) else { continue };
        if label.tag != meta_label.tag {
            out.insert(BindingViolation::TagMismatch {
                node: n.clone(),
                target: t.clone(),
                tag: label.tag.clone(),
                meta_tag: meta_label.tag.clone(),
            });
        }
        if strict {
            for (a, v) in &label.attrs {
                if let Some(mv) = meta_label.attr(a) {
                    if mv != v {
                        out.insert(BindingViolation::AttributeConflict {
                            node: n.clone(),
                            target: t.clone(),
                            attr: a.clone(),
                            value: v.clone(),
                            meta_value: mv.to_string(),
                        });
                    }
                }
            }
        }
    }
    for (a, b) in i.edges() {
        if let (Some(ma), Some(mb)) = (mu.get(a), mu.get(b)) {
            if !m.has_edge(ma, mb) {
                out.insert(BindingViolation::EdgeNotPreserved {
                    from: a.clone(),
                    to: b.clone(),
                });
            }
        }
    }
    if strict {
        if let Some(t) = mu.get(i.root()) {
            if t != m.root() {
                out.insert(BindingViolation::RootNotPreserved {
                    root: i.root().clone(),
                    target: t.clone(),
                });
            }
        }
    }
    out.into_iter().collect()
}
