//! The typed taxonomy graph: node and edge kinds, the graph file format,
//! schema validation and adjacency.

use crate::error::{Error, Result};
use crate::labels::{LabelSet, Task};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Root,
    CommonFactor,
    InterventionConcept,
    Skill,
    Example,
}

impl NodeKind {
    pub const ALL: [NodeKind; 5] = [
        NodeKind::Root,
        NodeKind::CommonFactor,
        NodeKind::InterventionConcept,
        NodeKind::Skill,
        NodeKind::Example,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Root => "root",
            NodeKind::CommonFactor => "common_factor",
            NodeKind::InterventionConcept => "intervention_concept",
            NodeKind::Skill => "skill",
            NodeKind::Example => "example",
        }
    }

    pub fn is_taxonomy(self) -> bool {
        self != NodeKind::Example
    }
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NodeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownNodeKind(s.to_string()))
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Fosters,
    Expresses,
    Demonstrates,
    Includes,
    Conveys,
    Supports,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 6] = [
        EdgeKind::Fosters,
        EdgeKind::Expresses,
        EdgeKind::Demonstrates,
        EdgeKind::Includes,
        EdgeKind::Conveys,
        EdgeKind::Supports,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Fosters => "fosters",
            EdgeKind::Expresses => "expresses",
            EdgeKind::Demonstrates => "demonstrates",
            EdgeKind::Includes => "includes",
            EdgeKind::Conveys => "conveys",
            EdgeKind::Supports => "supports",
        }
    }

    /// The legal (source kind, target kind) pair.
    pub fn endpoints(self) -> (NodeKind, NodeKind) {
        use NodeKind::*;
        match self {
            EdgeKind::Fosters => (Example, CommonFactor),
            EdgeKind::Expresses => (Example, InterventionConcept),
            EdgeKind::Demonstrates => (Example, Skill),
            EdgeKind::Includes => (CommonFactor, InterventionConcept),
            EdgeKind::Conveys => (Skill, InterventionConcept),
            EdgeKind::Supports => (Skill, CommonFactor),
        }
    }

    /// Endpoint legality. `Includes` is additionally allowed from the root
    /// to a common factor, which keeps the taxonomy a single component.
    pub fn is_legal(self, source: NodeKind, target: NodeKind) -> bool {
        self.endpoints() == (source, target)
            || (self == EdgeKind::Includes && source == NodeKind::Root && target == NodeKind::CommonFactor)
    }
}

impl FromStr for EdgeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownEdgeKind(s.to_string()))
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: String,
    pub kind: NodeKind,
    pub name: String,
    pub description: String,
    /// Text fed to the embedder: the utterance for examples, name followed by
    /// description for taxonomy nodes.
    pub text: String,
    /// Present on example nodes only.
    pub labels: Option<LabelSet>,
}

impl NodeRecord {
    pub fn taxonomy(id: &str, kind: NodeKind, name: &str, description: &str) -> Self {
        Self {
            id: id.to_string(),
            kind,
            name: name.to_string(),
            description: description.to_string(),
            text: taxonomy_text(name, description),
            labels: None,
        }
    }

    pub fn example(id: &str, text: &str, labels: LabelSet) -> Self {
        Self {
            id: id.to_string(),
            kind: NodeKind::Example,
            name: String::new(),
            description: String::new(),
            text: text.to_string(),
            labels: Some(labels),
        }
    }

    pub fn labels(&self) -> LabelSet {
        self.labels.unwrap_or_default()
    }
}

fn taxonomy_text(name: &str, description: &str) -> String {
    match (name.is_empty(), description.is_empty()) {
        (_, true) => name.to_string(),
        (true, false) => description.to_string(),
        (false, false) => format!("{name}. {description}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub kind: EdgeKind,
}

/// Undirected neighbor sets, one sorted and deduplicated list per node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn isolated(n: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); n],
        }
    }

    /// Builds symmetric neighbor lists from undirected pairs. Self-pairs are ignored.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for (u, v) in pairs {
            assert!(u < n && v < n, "edge endpoint out of range");
            if u == v {
                continue;
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self { neighbors }
    }

    /// Erdős–Rényi graph: each unordered pair is joined with probability `p`.
    pub fn random(n: usize, p: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(p) {
                    pairs.push((u, v));
                }
            }
        }
        Self::from_pairs(n, pairs)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors
            .iter()
            .enumerate()
            .all(|(v, list)| list.iter().all(|&u| self.neighbors[u].binary_search(&v).is_ok()))
    }

    /// Copy with every edge touching a `cut` node removed.
    pub fn without_nodes(&self, cut: &[bool]) -> Self {
        let neighbors = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(v, list)| {
                if cut[v] {
                    Vec::new()
                } else {
                    list.iter().copied().filter(|&u| !cut[u]).collect()
                }
            })
            .collect();
        Self { neighbors }
    }
}

#[derive(Debug, Clone)]
pub struct HeteroGraph {
    nodes: Vec<NodeRecord>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
    adjacency: Adjacency,
}

impl PartialEq for HeteroGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

impl HeteroGraph {
    /// Builds a graph from records and `(source id, target id, kind)` triples.
    pub fn new(nodes: Vec<NodeRecord>, edges: &[(String, String, EdgeKind)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(node.id.clone()));
            }
        }
        let mut resolved = Vec::with_capacity(edges.len());
        for (source, target, kind) in edges {
            let lookup = |id: &String| {
                index.get(id).copied().ok_or_else(|| Error::DanglingEdge {
                    source_id: source.clone(),
                    target: target.clone(),
                    missing: id.clone(),
                })
            };
            let (s, t) = (lookup(source)?, lookup(target)?);
            if s == t {
                return Err(Error::SelfLoop(source.clone()));
            }
            resolved.push(Edge {
                source: s,
                target: t,
                kind: *kind,
            });
        }
        let adjacency = Adjacency::from_pairs(nodes.len(), resolved.iter().map(|e| (e.source, e.target)));
        Ok(Self {
            nodes,
            edges: resolved,
            index,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeRecord {
        &self.nodes[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn example_indices(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Example)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let file: GraphFile = serde_json::from_slice(bytes).map_err(|e| Error::Syntax(e.to_string()))?;
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for raw in file.nodes {
            let kind: NodeKind = raw.kind.parse()?;
            let labels = raw.labels.map(|l| l.resolve()).transpose()?;
            let text = if kind.is_taxonomy() && raw.text.is_empty() {
                taxonomy_text(&raw.name, &raw.description)
            } else {
                raw.text
            };
            nodes.push(NodeRecord {
                id: raw.id,
                kind,
                name: raw.name,
                description: raw.description,
                text,
                labels,
            });
        }
        let mut edges = Vec::with_capacity(file.edges.len());
        for raw in file.edges {
            let kind: EdgeKind = raw.kind.parse()?;
            edges.push((raw.source, raw.target, kind));
        }
        Self::new(nodes, &edges)
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| RawNode {
                    id: n.id.clone(),
                    kind: n.kind.as_str().to_string(),
                    name: n.name.clone(),
                    description: n.description.clone(),
                    text: n.text.clone(),
                    labels: n.labels.map(RawLabels::from_labels),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| RawEdge {
                    source: self.nodes[e.source].id.clone(),
                    target: self.nodes[e.target].id.clone(),
                    kind: e.kind.as_str().to_string(),
                })
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("graph serialization cannot fail");
        out.push('\n');
        out
    }

    /// Reports every schema violation; an empty list means the graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.kind {
                NodeKind::Example => {
                    if node.labels().is_empty() {
                        out.push(Violation::UnlabeledExample { id: node.id.clone() });
                    }
                }
                _ => {
                    if node.name.trim().is_empty() {
                        out.push(Violation::UnnamedTaxonomyNode { id: node.id.clone() });
                    }
                    if node.labels.is_some() {
                        out.push(Violation::LabelsOnTaxonomyNode { id: node.id.clone() });
                    }
                }
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            let (s, t) = (&self.nodes[e.source], &self.nodes[e.target]);
            if !e.kind.is_legal(s.kind, t.kind) {
                out.push(Violation::IllegalEdge {
                    index: i,
                    source: s.id.clone(),
                    target: t.id.clone(),
                    kind: e.kind,
                    source_kind: s.kind,
                    target_kind: t.kind,
                });
            }
        }
        out
    }

    /// Histogram of present labels per task (index = class).
    pub fn label_histogram(&self, task: Task) -> Vec<usize> {
        let mut counts = vec![0; task.class_count()];
        for n in &self.nodes {
            if let Some(c) = n.labels().get(task) {
                counts[c] += 1;
            }
        }
        counts
    }
}

/// Free-function alias used by the CLI and tests.
pub fn parse_graph(bytes: &[u8]) -> Result<HeteroGraph> {
    HeteroGraph::parse(bytes)
}

pub fn validate_schema(g: &HeteroGraph) -> Vec<Violation> {
    g.validate()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    IllegalEdge {
        index: usize,
        source: String,
        target: String,
        kind: EdgeKind,
        source_kind: NodeKind,
        target_kind: NodeKind,
    },
    UnlabeledExample {
        id: String,
    },
    UnnamedTaxonomyNode {
        id: String,
    },
    LabelsOnTaxonomyNode {
        id: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IllegalEdge {
                index,
                source,
                target,
                kind,
                source_kind,
                target_kind,
            } => {
                let (want_s, want_t) = kind.endpoints();
                write!(
                    f,
                    "edge #{index} {source} -[{kind}]-> {target}: endpoints are {source_kind} -> {target_kind}, expected {want_s} -> {want_t}"
                )
            }
            Violation::UnlabeledExample { id } => write!(f, "example {id} has no labels"),
            Violation::UnnamedTaxonomyNode { id } => write!(f, "taxonomy node {id} has no name"),
            Violation::LabelsOnTaxonomyNode { id } => {
                write!(f, "taxonomy node {id} carries labels")
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    nodes: Vec<RawNode>,
    edges: Vec<RawEdge>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<RawLabels>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    source: String,
    target: String,
    kind: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cf: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skill: Option<String>,
}

impl RawLabels {
    fn resolve(self) -> Result<LabelSet> {
        let lookup = |task: Task, name: Option<String>| -> Result<Option<usize>> {
            name.map(|n| {
                task.class_index(&n).ok_or(Error::UnknownLabel {
                    task: task.as_str(),
                    label: n,
                })
            })
            .transpose()
        };
        Ok(LabelSet {
            cf: lookup(Task::Cf, self.cf)?,
            ic: lookup(Task::Ic, self.ic)?,
            skill: lookup(Task::Skill, self.skill)?,
        })
    }

    fn from_labels(l: LabelSet) -> Self {
        let name = |t: Task| l.get(t).map(|c| t.class_name(c).to_string());
        Self {
            cf: name(Task::Cf),
            ic: name(Task::Ic),
            skill: name(Task::Skill),
        }
    }
}

/// Number of nodes per kind, in kind order.
pub fn kind_counts(g: &HeteroGraph) -> BTreeMap<NodeKind, usize> {
    let mut out = BTreeMap::new();
    for n in g.nodes() {
        *out.entry(n.kind).or_insert(0) += 1;
    }
    out
}
