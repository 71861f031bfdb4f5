//! The leveled graph: one node per outcome of each level's random variable,
//! frequency-annotated arcs between consecutive levels, and per-node totals.
//!
//! Every observation is a path `ROOT -> x1 -> ... -> xm`. Ingesting it bumps
//! each arc on the path by one and keeps both endpoint totals in sync, so the
//! classification normalizer `T(w)` (incoming mass) and the class-level
//! frequency (outgoing mass) are both O(1) reads.
//!
//! Models trained on disjoint parts of a stream can be merged by pointwise
//! addition; the result is identical to training on the concatenated stream.

use std::collections::hash_map::Entry;
use std::fmt;

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

/// Reserved label of the synthetic level-0 node.
pub const ROOT_LABEL: &str = "ROOT";

/// Version written to (and required from) model files.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("observation has {found} labels, schema expects {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("empty label at level {level}")]
    EmptyLabel { level: usize },
    #[error("schemas differ: {left:?} vs {right:?}")]
    SchemaMismatch { left: Vec<String>, right: Vec<String> },
    #[error("root counting differs: {left} vs {right}")]
    CountingMismatch { left: RootCounting, right: RootCounting },
    #[error("node {0} is at a level outside the schema")]
    LevelOutOfRange(NodeRef),
    #[error("duplicate node {0}")]
    DuplicateNode(NodeRef),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(NodeRef, NodeRef),
    #[error("edge {parent} -> {child} references a node that does not exist")]
    DanglingEdge { parent: NodeRef, child: NodeRef },
    #[error("model has no {ROOT_LABEL} node")]
    MissingRoot,
    #[error("skipping the root arc requires distinct-user root counting")]
    RootArcRequired,
}

/// Level names for levels `1..=m`. Level 0 always holds the single
/// synthetic `ROOT` node and is not named.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSchema {
    level_names: Vec<String>,
}

impl ModelSchema {
    pub fn new<I, S>(names: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let level_names: Vec<String> = names.into_iter().map(Into::into).collect();
        if level_names.is_empty() {
            return Err(ModelError::InvalidSchema("at least one level is required".into()));
        }
        let mut seen = FxHashSet::default();
        for name in &level_names {
            if name.is_empty() {
                return Err(ModelError::InvalidSchema("level names must be non-empty".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(ModelError::InvalidSchema(format!("duplicate level name {name:?}")));
            }
        }
        Ok(Self { level_names })
    }

    /// Number of levels below the root (`m`).
    pub fn levels(&self) -> usize {
        self.level_names.len()
    }

    pub fn level_names(&self) -> &[String] {
        &self.level_names
    }

    /// 1-based level index of a named level.
    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.level_names.iter().position(|n| n == name).map(|i| i + 1)
    }
}

/// A node addressed by level and label. `(level, label)` is unique.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub level: usize,
    pub label: String,
}

impl NodeRef {
    pub fn new(level: usize, label: impl Into<String>) -> Self {
        Self { level, label: label.into() }
    }

    pub fn root() -> Self {
        Self::new(0, ROOT_LABEL)
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{:?}", self.level, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeStat {
    /// Sum of incoming arc frequencies, `T(w)`.
    pub in_total: u64,
    /// Sum of outgoing arc frequencies.
    pub out_total: u64,
}

/// What the `ROOT -> level 1` arcs count.
///
/// `Observations` is the plain path model: every observation bumps its root
/// arc, so the root's outgoing mass equals `n`. `DistinctUsers` is the
/// two-level user-log mode, where a class's root arc counts the distinct users
/// of that class while `n` still counts (class, term) observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RootCounting {
    #[default]
    Observations,
    DistinctUsers,
}

impl RootCounting {
    pub fn as_str(self) -> &'static str {
        match self {
            RootCounting::Observations => "observations",
            RootCounting::DistinctUsers => "distinct-users",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "observations" => Some(RootCounting::Observations),
            "distinct-users" => Some(RootCounting::DistinctUsers),
            _ => None,
        }
    }
}

impl fmt::Display for RootCounting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One training path: `labels[i]` is the outcome at level `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    labels: Vec<String>,
}

impl Observation {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { labels: labels.into_iter().map(Into::into).collect() }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<String> {
        self.labels
    }
}

/// A stored arc with its frequency `f(parent, child)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub parent: NodeRef,
    pub child: NodeRef,
    pub freq: u64,
}

/// A broken model invariant, naming the node or arc involved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    InTotal { node: NodeRef, stored: u64, expected: u64 },
    OutTotal { node: NodeRef, stored: u64, expected: u64 },
    LevelSkip { parent: NodeRef, child: NodeRef },
    ZeroFrequency { parent: NodeRef, child: NodeRef },
    BoundaryMass { boundary: usize, mass: u64, n: u64 },
    Unreachable { node: NodeRef },
    ForeignRootLevelNode { node: NodeRef },
    UserCount { node: NodeRef, users: u64, observations: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InTotal { node, stored, expected } => write!(
                f,
                "T-consistency: {node} stores in_total={stored}, incoming arcs sum to {expected}"
            ),
            Violation::OutTotal { node, stored, expected } => write!(
                f,
                "out-consistency: {node} stores out_total={stored}, outgoing arcs sum to {expected}"
            ),
            Violation::LevelSkip { parent, child } => {
                write!(f, "leveled arcs: {parent} -> {child} does not join consecutive levels")
            }
            Violation::ZeroFrequency { parent, child } => {
                write!(f, "stored arc {parent} -> {child} has frequency 0")
            }
            Violation::BoundaryMass { boundary, mass, n } => write!(
                f,
                "boundary mass: arcs into level {boundary} sum to {mass}, observation count is {n}"
            ),
            Violation::Unreachable { node } => write!(f, "reachability: {node} is not reachable from ROOT"),
            Violation::ForeignRootLevelNode { node } => {
                write!(f, "root level: {node} is not the reserved {ROOT_LABEL} node")
            }
            Violation::UserCount { node, users, observations } => write!(
                f,
                "user counting: {node} counts {users} users but only {observations} observations"
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct NodeId {
    level: u32,
    index: u32,
}

impl NodeId {
    const ROOT: NodeId = NodeId { level: 0, index: 0 };

    pub(crate) fn level(self) -> usize {
        self.level as usize
    }
}

#[derive(Debug, Clone)]
struct NodeEntry {
    label: String,
    stat: NodeStat,
    parents: Vec<NodeId>,
    children: Vec<NodeId>,
}

#[derive(Debug, Clone, Default)]
struct Level {
    lookup: FxHashMap<String, u32>,
    nodes: Vec<NodeEntry>,
}

/// A trained model.
///
/// Node ids are assigned in insertion order, so two models holding the same
/// counts may lay them out differently; equality compares labels and counts
/// only.
#[derive(Debug, Clone)]
pub struct Model {
    schema: ModelSchema,
    root_counting: RootCounting,
    format_version: u32,
    n: u64,
    levels: Vec<Level>,
    edges: FxHashMap<(NodeId, NodeId), u64>,
}

impl Model {
    /// Empty model: only `ROOT`, all totals zero, `n = 0`.
    pub fn new(schema: ModelSchema) -> Self {
        let mut levels = vec![Level::default(); schema.levels() + 1];
        levels[0].lookup.insert(ROOT_LABEL.to_owned(), 0);
        levels[0].nodes.push(NodeEntry {
            label: ROOT_LABEL.to_owned(),
            stat: NodeStat::default(),
            parents: Vec::new(),
            children: Vec::new(),
        });
        Self {
            schema,
            root_counting: RootCounting::Observations,
            format_version: FORMAT_VERSION,
            n: 0,
            levels,
            edges: FxHashMap::default(),
        }
    }

    /// Empty model with the given root-arc counting rule.
    /// `DistinctUsers` needs at least two levels.
    pub fn with_root_counting(schema: ModelSchema, counting: RootCounting) -> Result<Self, ModelError> {
        if counting == RootCounting::DistinctUsers && schema.levels() < 2 {
            return Err(ModelError::InvalidSchema(
                "distinct-user root counting needs at least two levels".into(),
            ));
        }
        let mut model = Self::new(schema);
        model.root_counting = counting;
        Ok(model)
    }

    /// Trains a fresh model on a sequence of observations.
    pub fn train<'a, I>(schema: ModelSchema, observations: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let mut model = Self::new(schema);
        for obs in observations {
            model.ingest(obs)?;
        }
        Ok(model)
    }

    pub fn schema(&self) -> &ModelSchema {
        &self.schema
    }

    pub fn root_counting(&self) -> RootCounting {
        self.root_counting
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    /// Number of ingested observations.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Number of levels below the root (`m`).
    pub fn levels(&self) -> usize {
        self.schema.levels()
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(|l| l.nodes.len()).sum()
    }

    /// Node count at `level` (0 for levels outside the schema).
    pub fn level_size(&self, level: usize) -> usize {
        self.levels.get(level).map_or(0, |l| l.nodes.len())
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of arcs from level `boundary - 1` into level `boundary`.
    pub fn boundary_edge_count(&self, boundary: usize) -> usize {
        self.edges
            .keys()
            .filter(|(p, c)| c.level() == boundary && p.level() + 1 == boundary)
            .count()
    }

    /// Adds one observation path. Nothing is modified on error.
    pub fn ingest(&mut self, obs: &Observation) -> Result<(), ModelError> {
        self.ingest_path(obs.labels())
    }

    pub fn ingest_path<S: AsRef<str>>(&mut self, labels: &[S]) -> Result<(), ModelError> {
        self.ingest_path_with_root(labels, true)
    }

    /// Adds one observation path, optionally leaving the `ROOT -> x1` arc
    /// untouched. Skipping the root arc is only meaningful for models using
    /// [`RootCounting::DistinctUsers`], where it marks a repeat observation of
    /// an already-counted user.
    pub fn ingest_path_with_root<S: AsRef<str>>(
        &mut self,
        labels: &[S],
        count_root: bool,
    ) -> Result<(), ModelError> {
        let m = self.schema.levels();
        if labels.len() != m {
            return Err(ModelError::ArityMismatch { expected: m, found: labels.len() });
        }
        if let Some(i) = labels.iter().position(|l| l.as_ref().is_empty()) {
            return Err(ModelError::EmptyLabel { level: i + 1 });
        }
        if !count_root && self.root_counting == RootCounting::Observations {
            return Err(ModelError::RootArcRequired);
        }
        let mut parent = NodeId::ROOT;
        for (i, label) in labels.iter().enumerate() {
            let child = self.intern(i + 1, label.as_ref());
            if i > 0 || count_root {
                self.add_edge_freq(parent, child, 1);
                self.node_mut(parent).stat.out_total += 1;
                self.node_mut(child).stat.in_total += 1;
            }
            parent = child;
        }
        self.n += 1;
        Ok(())
    }

    /// Folds `other` into `self`: node union, pointwise arc sums, totals
    /// recomputed from arcs, observation counts added.
    pub fn merge_from(&mut self, other: &Model) -> Result<(), ModelError> {
        self.check_compatible(other)?;
        let mut remap: Vec<Vec<NodeId>> = Vec::with_capacity(other.levels.len());
        for (level, table) in other.levels.iter().enumerate() {
            remap.push(table.nodes.iter().map(|node| self.intern(level, &node.label)).collect());
        }
        for (&(p, c), &freq) in &other.edges {
            let p = remap[p.level()][p.index as usize];
            let c = remap[c.level()][c.index as usize];
            self.add_edge_freq(p, c, freq);
        }
        self.n += other.n;
        self.recompute_totals();
        Ok(())
    }

    /// Arc frequency `f(parent, child)`; 0 for absent arcs or unknown nodes.
    pub fn frequency(&self, parent: &NodeRef, child: &NodeRef) -> u64 {
        match (self.id_of(parent), self.id_of(child)) {
            (Some(p), Some(c)) => self.edge_freq(p, c),
            _ => 0,
        }
    }

    pub fn node(&self, node: &NodeRef) -> Option<NodeStat> {
        self.id_of(node).map(|id| self.entry(id).stat)
    }

    pub fn contains(&self, node: &NodeRef) -> bool {
        self.id_of(node).is_some()
    }

    /// All nodes sorted by `(level, label)`.
    pub fn nodes(&self) -> Vec<(NodeRef, NodeStat)> {
        let mut out: Vec<(NodeRef, NodeStat)> = self
            .levels
            .iter()
            .enumerate()
            .flat_map(|(level, table)| {
                table.nodes.iter().map(move |n| (NodeRef::new(level, n.label.clone()), n.stat))
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// All arcs sorted by `(parent, child)`.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out: Vec<Edge> = self
            .edges
            .iter()
            .map(|(&(p, c), &freq)| Edge { parent: self.node_ref(p), child: self.node_ref(c), freq })
            .collect();
        out.sort_by(|a, b| (&a.parent, &a.child).cmp(&(&b.parent, &b.child)));
        out
    }

    /// Parents of `node` with arc frequencies, sorted by label.
    pub fn parents(&self, node: &NodeRef) -> Option<Vec<(NodeRef, u64)>> {
        let id = self.id_of(node)?;
        Some(self.neighbours(id, &self.entry(id).parents, true))
    }

    /// Children of `node` with arc frequencies, sorted by label.
    pub fn children(&self, node: &NodeRef) -> Option<Vec<(NodeRef, u64)>> {
        let id = self.id_of(node)?;
        Some(self.neighbours(id, &self.entry(id).children, false))
    }

    /// Labels of all nodes at `level`, unsorted.
    pub fn level_labels(&self, level: usize) -> impl Iterator<Item = &str> {
        self.levels.get(level).into_iter().flat_map(|l| l.nodes.iter().map(|n| n.label.as_str()))
    }

    /// Checks every structural and counting invariant. Empty iff the model
    /// is consistent.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let m = self.schema.levels();

        for (id, entry) in self.iter_entries() {
            if id.level() == 0 && entry.label != ROOT_LABEL {
                violations.push(Violation::ForeignRootLevelNode { node: self.node_ref(id) });
            }
        }

        let mut mass = vec![0u64; m + 1];
        let mut in_sum: FxHashMap<NodeId, u64> = FxHashMap::default();
        let mut out_sum: FxHashMap<NodeId, u64> = FxHashMap::default();
        let mut sorted_edges: Vec<(NodeId, NodeId, u64)> =
            self.edges.iter().map(|(&(p, c), &f)| (p, c, f)).collect();
        sorted_edges.sort_by_key(|&(p, c, _)| (self.node_ref(p), self.node_ref(c)));
        for &(p, c, f) in &sorted_edges {
            if c.level() != p.level() + 1 {
                violations.push(Violation::LevelSkip { parent: self.node_ref(p), child: self.node_ref(c) });
            } else {
                mass[c.level()] += f;
            }
            if f == 0 {
                violations.push(Violation::ZeroFrequency { parent: self.node_ref(p), child: self.node_ref(c) });
            }
            *in_sum.entry(c).or_default() += f;
            *out_sum.entry(p).or_default() += f;
        }

        let mut ordered: Vec<(NodeRef, NodeId)> =
            self.iter_entries().map(|(id, _)| (self.node_ref(id), id)).collect();
        ordered.sort();
        for (node, id) in &ordered {
            let stat = self.entry(*id).stat;
            let expected_in = in_sum.get(id).copied().unwrap_or(0);
            let expected_out = out_sum.get(id).copied().unwrap_or(0);
            if stat.in_total != expected_in {
                violations.push(Violation::InTotal { node: node.clone(), stored: stat.in_total, expected: expected_in });
            }
            if stat.out_total != expected_out {
                violations.push(Violation::OutTotal {
                    node: node.clone(),
                    stored: stat.out_total,
                    expected: expected_out,
                });
            }
            if self.root_counting == RootCounting::DistinctUsers && id.level() == 1 {
                let users = expected_in;
                let observations = expected_out;
                if users > observations || (observations > 0 && users == 0) {
                    violations.push(Violation::UserCount { node: node.clone(), users, observations });
                }
            }
        }

        for (boundary, &boundary_mass) in mass.iter().enumerate().skip(1) {
            let relaxed = boundary == 1 && self.root_counting == RootCounting::DistinctUsers;
            let broken = if relaxed { boundary_mass > self.n } else { boundary_mass != self.n };
            if broken {
                violations.push(Violation::BoundaryMass { boundary, mass: boundary_mass, n: self.n });
            }
        }

        let reachable = self.reachable_from_root();
        for (node, id) in &ordered {
            if id.level() > 0 && self.entry(*id).stat.in_total > 0 && !reachable.contains(id) {
                violations.push(Violation::Unreachable { node: node.clone() });
            }
        }
        violations
    }

    /// Rebuilds a model from raw records without checking counting
    /// invariants; run [`Model::validate`] on the result. Fails only when the
    /// records cannot be represented (unknown levels, duplicates, arcs to
    /// missing nodes, no root).
    pub fn from_parts<N, E>(
        schema: ModelSchema,
        root_counting: RootCounting,
        n: u64,
        nodes: N,
        edges: E,
    ) -> Result<Self, ModelError>
    where
        N: IntoIterator<Item = (NodeRef, NodeStat)>,
        E: IntoIterator<Item = Edge>,
    {
        let m = schema.levels();
        let mut levels = vec![Level::default(); m + 1];
        for (node, stat) in nodes {
            if node.level > m {
                return Err(ModelError::LevelOutOfRange(node));
            }
            if node.label.is_empty() {
                return Err(ModelError::EmptyLabel { level: node.level });
            }
            let table = &mut levels[node.level];
            if table.lookup.contains_key(&node.label) {
                return Err(ModelError::DuplicateNode(node));
            }
            table.lookup.insert(node.label.clone(), table.nodes.len() as u32);
            table.nodes.push(NodeEntry { label: node.label, stat, parents: Vec::new(), children: Vec::new() });
        }
        if !levels[0].lookup.contains_key(ROOT_LABEL) {
            return Err(ModelError::MissingRoot);
        }
        // Keep ROOT at index 0 so NodeId::ROOT stays valid.
        let root_idx = levels[0].lookup[ROOT_LABEL] as usize;
        if root_idx != 0 {
            levels[0].nodes.swap(0, root_idx);
            let moved = levels[0].nodes[root_idx].label.clone();
            levels[0].lookup.insert(moved, root_idx as u32);
            levels[0].lookup.insert(ROOT_LABEL.to_owned(), 0);
        }
        let mut model = Self {
            schema,
            root_counting,
            format_version: FORMAT_VERSION,
            n,
            levels,
            edges: FxHashMap::default(),
        };
        for edge in edges {
            let (Some(p), Some(c)) = (model.id_of(&edge.parent), model.id_of(&edge.child)) else {
                return Err(ModelError::DanglingEdge { parent: edge.parent, child: edge.child });
            };
            if model.edges.contains_key(&(p, c)) {
                return Err(ModelError::DuplicateEdge(edge.parent, edge.child));
            }
            model.edges.insert((p, c), edge.freq);
            model.node_mut(p).children.push(c);
            model.node_mut(c).parents.push(p);
        }
        Ok(model)
    }

    // ----- crate-internal id-based access used by scoring -----

    pub(crate) fn id_of(&self, node: &NodeRef) -> Option<NodeId> {
        self.id_of_label(node.level, &node.label)
    }

    pub(crate) fn id_of_label(&self, level: usize, label: &str) -> Option<NodeId> {
        let index = *self.levels.get(level)?.lookup.get(label)?;
        Some(NodeId { level: level as u32, index })
    }

    pub(crate) fn label(&self, id: NodeId) -> &str {
        &self.entry(id).label
    }

    pub(crate) fn stat(&self, id: NodeId) -> NodeStat {
        self.entry(id).stat
    }

    pub(crate) fn parent_ids(&self, id: NodeId) -> &[NodeId] {
        &self.entry(id).parents
    }

    pub(crate) fn child_ids(&self, id: NodeId) -> &[NodeId] {
        &self.entry(id).children
    }

    pub(crate) fn edge_freq(&self, parent: NodeId, child: NodeId) -> u64 {
        self.edges.get(&(parent, child)).copied().unwrap_or(0)
    }

    pub(crate) fn node_ref(&self, id: NodeId) -> NodeRef {
        NodeRef::new(id.level(), self.label(id).to_owned())
    }

    // ----- internals -----

    fn entry(&self, id: NodeId) -> &NodeEntry {
        &self.levels[id.level()].nodes[id.index as usize]
    }

    fn node_mut(&mut self, id: NodeId) -> &mut NodeEntry {
        &mut self.levels[id.level()].nodes[id.index as usize]
    }

    fn iter_entries(&self) -> impl Iterator<Item = (NodeId, &NodeEntry)> {
        self.levels.iter().enumerate().flat_map(|(level, table)| {
            table
                .nodes
                .iter()
                .enumerate()
                .map(move |(index, e)| (NodeId { level: level as u32, index: index as u32 }, e))
        })
    }

    fn intern(&mut self, level: usize, label: &str) -> NodeId {
        let table = &mut self.levels[level];
        let index = match table.lookup.get(label) {
            Some(&index) => index,
            None => {
                let index = table.nodes.len() as u32;
                table.lookup.insert(label.to_owned(), index);
                table.nodes.push(NodeEntry {
                    label: label.to_owned(),
                    stat: NodeStat::default(),
                    parents: Vec::new(),
                    children: Vec::new(),
                });
                index
            }
        };
        NodeId { level: level as u32, index }
    }

    fn add_edge_freq(&mut self, parent: NodeId, child: NodeId, by: u64) {
        match self.edges.entry((parent, child)) {
            Entry::Occupied(mut e) => *e.get_mut() += by,
            Entry::Vacant(e) => {
                e.insert(by);
                self.node_mut(parent).children.push(child);
                self.node_mut(child).parents.push(parent);
            }
        }
    }

    fn recompute_totals(&mut self) {
        for table in &mut self.levels {
            for node in &mut table.nodes {
                node.stat = NodeStat::default();
            }
        }
        let sums: Vec<(NodeId, NodeId, u64)> = self.edges.iter().map(|(&(p, c), &f)| (p, c, f)).collect();
        for (p, c, f) in sums {
            self.node_mut(p).stat.out_total += f;
            self.node_mut(c).stat.in_total += f;
        }
    }

    fn check_compatible(&self, other: &Model) -> Result<(), ModelError> {
        if self.schema != other.schema {
            return Err(ModelError::SchemaMismatch {
                left: self.schema.level_names.clone(),
                right: other.schema.level_names.clone(),
            });
        }
        if self.root_counting != other.root_counting {
            return Err(ModelError::CountingMismatch { left: self.root_counting, right: other.root_counting });
        }
        Ok(())
    }

    fn neighbours(&self, of: NodeId, ids: &[NodeId], parents: bool) -> Vec<(NodeRef, u64)> {
        let mut out: Vec<(NodeRef, u64)> = ids
            .iter()
            .map(|&other| {
                let freq = if parents { self.edge_freq(other, of) } else { self.edge_freq(of, other) };
                (self.node_ref(other), freq)
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    fn reachable_from_root(&self) -> FxHashSet<NodeId> {
        let mut seen = FxHashSet::default();
        let mut stack = vec![NodeId::ROOT];
        seen.insert(NodeId::ROOT);
        while let Some(id) = stack.pop() {
            for &child in self.child_ids(id) {
                if self.edge_freq(id, child) > 0 && seen.insert(child) {
                    stack.push(child);
                }
            }
        }
        seen
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        if self.schema != other.schema
            || self.root_counting != other.root_counting
            || self.format_version != other.format_version
            || self.n != other.n
            || self.levels.len() != other.levels.len()
            || self.edges.len() != other.edges.len()
        {
            return false;
        }
        for (mine, theirs) in self.levels.iter().zip(&other.levels) {
            if mine.nodes.len() != theirs.nodes.len() {
                return false;
            }
            for node in &mine.nodes {
                match theirs.lookup.get(&node.label) {
                    Some(&idx) if theirs.nodes[idx as usize].stat == node.stat => {}
                    _ => return false,
                }
            }
        }
        self.edges.iter().all(|(&(p, c), &f)| {
            match (other.id_of_label(p.level(), self.label(p)), other.id_of_label(c.level(), self.label(c))) {
                (Some(op), Some(oc)) => other.edges.get(&(op, oc)) == Some(&f),
                _ => false,
            }
        })
    }
}

impl Eq for Model {}

/// Merges two models into a new one. Commutative and associative.
pub fn merge(a: &Model, b: &Model) -> Result<Model, ModelError> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema2() -> ModelSchema {
        ModelSchema::new(["class", "term"]).unwrap()
    }

    fn job_log_pairs() -> Vec<(&'static str, &'static str)> {
        let rows: [(&str, &[&str]); 5] = [
            ("Java Developer", &["Java", "Java Developer", "C", "Software Engineer"]),
            ("Nurse", &["RN", "Rigistered Nurse", "Health Care"]),
            (".NET Developer", &["C#", "ASP", "VB", "Software Engineer", "SE"]),
            ("Java Developer", &["Java", "JEE", "Struts", "Software Engineer", "SE"]),
            ("Health Care", &["Health Care Rep", "HealthCare"]),
        ];
        rows.iter().flat_map(|(c, ts)| ts.iter().map(move |t| (*c, *t))).collect()
    }

    fn job_model() -> Model {
        let mut m = Model::new(schema2());
        for (c, t) in job_log_pairs() {
            m.ingest_path(&[c, t]).unwrap();
        }
        m
    }

    #[test]
    fn create_model_is_empty() {
        let m = Model::new(schema2());
        assert_eq!(m.levels(), 2);
        assert_eq!(m.node_count(), 1);
        assert_eq!(m.edge_count(), 0);
        assert_eq!(m.n(), 0);
        assert_eq!(m.node(&NodeRef::root()), Some(NodeStat::default()));
        assert!(m.validate().is_empty());

        let ms = Model::new(ModelSchema::new(["MS1", "MS2"]).unwrap());
        assert_eq!(ms.node_count(), 1);
        assert_eq!(ms.schema().level_names(), ["MS1", "MS2"]);
    }

    #[test]
    fn schema_rejects_degenerate_input() {
        assert!(matches!(ModelSchema::new(Vec::<String>::new()), Err(ModelError::InvalidSchema(_))));
        assert!(matches!(ModelSchema::new(["a", "a"]), Err(ModelError::InvalidSchema(_))));
        assert!(matches!(ModelSchema::new(["a", ""]), Err(ModelError::InvalidSchema(_))));
        assert_eq!(ModelSchema::new(["a", "b"]).unwrap().level_index("b"), Some(2));
    }

    #[test]
    fn single_observation() {
        let mut m = Model::new(schema2());
        m.ingest(&Observation::new(["Java Developer", "Java"])).unwrap();
        assert_eq!(m.node_count(), 3);
        assert_eq!(m.frequency(&NodeRef::root(), &NodeRef::new(1, "Java Developer")), 1);
        assert_eq!(m.frequency(&NodeRef::new(1, "Java Developer"), &NodeRef::new(2, "Java")), 1);
        assert_eq!(m.n(), 1);
    }

    #[test]
    fn repeated_observation_doubles_counts() {
        let mut m = Model::new(schema2());
        let obs = Observation::new(["Java Developer", "Java"]);
        m.ingest(&obs).unwrap();
        m.ingest(&obs).unwrap();
        assert_eq!(m.frequency(&NodeRef::root(), &NodeRef::new(1, "Java Developer")), 2);
        assert_eq!(m.frequency(&NodeRef::new(1, "Java Developer"), &NodeRef::new(2, "Java")), 2);
        assert_eq!(m.n(), 2);
    }

    #[test]
    fn job_log_counts_match_brute_force() {
        let pairs = job_log_pairs();
        assert_eq!(pairs.len(), 19);
        let m = job_model();
        let class_term_edges: Vec<Edge> = m.edges().into_iter().filter(|e| e.parent.level == 1).collect();
        assert_eq!(class_term_edges.len(), 17);
        for e in &class_term_edges {
            let brute = pairs.iter().filter(|(c, t)| *c == e.parent.label && *t == e.child.label).count() as u64;
            assert_eq!(e.freq, brute, "{} -> {}", e.parent, e.child);
            let expected = match (e.parent.label.as_str(), e.child.label.as_str()) {
                ("Java Developer", "Java") | ("Java Developer", "Software Engineer") => 2,
                _ => 1,
            };
            assert_eq!(e.freq, expected);
        }
        assert_eq!(m.n(), 19);
        assert_eq!(m.frequency(&NodeRef::new(1, "Java Developer"), &NodeRef::new(2, "Software Engineer")), 2);
        assert_eq!(m.frequency(&NodeRef::new(1, "Nurse"), &NodeRef::new(2, "Java")), 0);
        assert_eq!(m.frequency(&NodeRef::new(1, "Nobody"), &NodeRef::new(2, "Java")), 0);
        assert!(m.validate().is_empty());
    }

    #[test]
    fn ingest_rejects_bad_observations_without_mutation() {
        let mut m = job_model();
        let before = m.clone();
        assert_eq!(
            m.ingest(&Observation::new(["a"])),
            Err(ModelError::ArityMismatch { expected: 2, found: 1 })
        );
        assert_eq!(m.ingest(&Observation::new(["a", ""])), Err(ModelError::EmptyLabel { level: 2 }));
        assert_eq!(m.ingest_path_with_root(&["a", "b"], false), Err(ModelError::RootArcRequired));
        assert_eq!(m, before);
    }

    #[test]
    fn distinct_user_root_counting() {
        let mut m = Model::with_root_counting(schema2(), RootCounting::DistinctUsers).unwrap();
        m.ingest_path_with_root(&["Nurse", "RN"], true).unwrap();
        m.ingest_path_with_root(&["Nurse", "Health Care"], false).unwrap();
        assert_eq!(m.frequency(&NodeRef::root(), &NodeRef::new(1, "Nurse")), 1);
        assert_eq!(m.node(&NodeRef::new(1, "Nurse")).unwrap(), NodeStat { in_total: 1, out_total: 2 });
        assert_eq!(m.n(), 2);
        assert!(m.validate().is_empty(), "{:?}", m.validate());
        let one_level = ModelSchema::new(["only"]).unwrap();
        assert!(Model::with_root_counting(one_level, RootCounting::DistinctUsers).is_err());
    }

    #[test]
    fn merge_identity_and_schema_mismatch() {
        let m = job_model();
        let empty = Model::new(schema2());
        assert_eq!(merge(&m, &empty).unwrap(), m);
        assert_eq!(merge(&empty, &m).unwrap(), m);
        let other = Model::new(ModelSchema::new(["x", "y"]).unwrap());
        assert!(matches!(merge(&m, &other), Err(ModelError::SchemaMismatch { .. })));
        let users = Model::with_root_counting(schema2(), RootCounting::DistinctUsers).unwrap();
        assert!(matches!(merge(&m, &users), Err(ModelError::CountingMismatch { .. })));
    }

    #[test]
    fn merge_disjoint_classes_dedupes_root() {
        let mut a = Model::new(schema2());
        a.ingest_path(&["A", "x"]).unwrap();
        a.ingest_path(&["A", "y"]).unwrap();
        let mut b = Model::new(schema2());
        b.ingest_path(&["B", "x"]).unwrap();
        let merged = merge(&a, &b).unwrap();
        assert_eq!(merged.level_size(0), 1);
        assert_eq!(merged.level_size(1), 2);
        assert_eq!(merged.level_size(2), 2);
        assert_eq!(merged.node(&NodeRef::root()).unwrap().out_total, 3);
        assert_eq!(merged.node(&NodeRef::new(2, "x")).unwrap().in_total, 2);
        assert!(merged.validate().is_empty());
    }

    #[test]
    fn validate_reports_corrupted_total() {
        let m = job_model();
        let mut nodes = m.nodes();
        for (node, stat) in &mut nodes {
            if node.level == 2 && node.label == "Java" {
                stat.in_total += 5;
            }
        }
        let corrupt = Model::from_parts(m.schema().clone(), m.root_counting(), m.n(), nodes, m.edges()).unwrap();
        let v = corrupt.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(&v[0], Violation::InTotal { node, stored: 7, expected: 2 } if node.label == "Java"));
    }

    #[test]
    fn validate_reports_level_skip() {
        let m = job_model();
        let mut nodes = m.nodes();
        for (node, stat) in &mut nodes {
            if node.level == 0 {
                stat.out_total += 1;
            }
            if node.level == 2 && node.label == "Java" {
                stat.in_total += 1;
            }
        }
        let mut edges = m.edges();
        edges.push(Edge { parent: NodeRef::root(), child: NodeRef::new(2, "Java"), freq: 1 });
        let corrupt = Model::from_parts(m.schema().clone(), m.root_counting(), m.n(), nodes, edges).unwrap();
        let v = corrupt.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(&v[0], Violation::LevelSkip { .. }));
    }

    #[test]
    fn validate_reports_boundary_mass_and_unreachable() {
        let m = job_model();
        // Drop the ROOT -> Nurse arc and fix the totals it touched: Nurse is
        // no longer reachable and boundary 1 loses mass.
        let edges: Vec<Edge> = m.edges().into_iter().filter(|e| e.child.label != "Nurse").collect();
        let mut nodes = m.nodes();
        for (node, stat) in &mut nodes {
            if node.level == 0 {
                stat.out_total -= 3;
            }
            if node.level == 1 && node.label == "Nurse" {
                stat.in_total = 0;
            }
        }
        let corrupt = Model::from_parts(m.schema().clone(), m.root_counting(), m.n(), nodes, edges).unwrap();
        let v = corrupt.validate();
        assert!(v.iter().any(|x| matches!(x, Violation::BoundaryMass { boundary: 1, mass: 16, n: 19 })), "{v:?}");
        assert!(v.iter().any(|x| matches!(x, Violation::Unreachable { node } if node.label == "RN")), "{v:?}");
    }

    #[test]
    fn from_parts_rejects_dangling_edges() {
        let m = job_model();
        let mut edges = m.edges();
        edges.push(Edge { parent: NodeRef::new(1, "Nurse"), child: NodeRef::new(2, "Ghost"), freq: 1 });
        let err = Model::from_parts(m.schema().clone(), m.root_counting(), m.n(), m.nodes(), edges).unwrap_err();
        assert!(matches!(err, ModelError::DanglingEdge { .. }));
        let no_root: Vec<_> = m.nodes().into_iter().filter(|(n, _)| n.level > 0).collect();
        assert_eq!(
            Model::from_parts(m.schema().clone(), m.root_counting(), m.n(), no_root, Vec::new()).unwrap_err(),
            ModelError::MissingRoot
        );
    }

    #[test]
    fn from_parts_round_trips_listing() {
        let m = job_model();
        let rebuilt = Model::from_parts(m.schema().clone(), m.root_counting(), m.n(), m.nodes(), m.edges()).unwrap();
        assert_eq!(rebuilt, m);
        assert_eq!(rebuilt.parents(&NodeRef::new(2, "Software Engineer")).unwrap().len(), 2);
    }

    fn stream_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
        let label = prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from);
        prop::collection::vec(prop::collection::vec(label, 3), 0..40)
    }

    fn train3(stream: &[Vec<String>]) -> Model {
        let mut m = Model::new(ModelSchema::new(["x", "y", "z"]).unwrap());
        for path in stream {
            m.ingest_path(path).unwrap();
        }
        m
    }

    proptest! {
        #[test]
        fn merge_of_split_equals_single_stream(stream in stream_strategy(), cut in 0usize..41) {
            let cut = cut.min(stream.len());
            let whole = train3(&stream);
            let merged = merge(&train3(&stream[..cut]), &train3(&stream[cut..])).unwrap();
            prop_assert_eq!(&merged, &whole);
            prop_assert!(merged.validate().is_empty());
        }

        #[test]
        fn merge_commutes_and_associates(a in stream_strategy(), b in stream_strategy(), c in stream_strategy()) {
            let (ma, mb, mc) = (train3(&a), train3(&b), train3(&c));
            prop_assert_eq!(merge(&ma, &mb).unwrap(), merge(&mb, &ma).unwrap());
            let left = merge(&merge(&ma, &mb).unwrap(), &mc).unwrap();
            let right = merge(&ma, &merge(&mb, &mc).unwrap()).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn training_is_order_invariant(stream in stream_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = stream.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(train3(&stream), train3(&shuffled));
        }

        #[test]
        fn per_item_merge_equals_incremental(stream in stream_strategy()) {
            let mut folded = Model::new(ModelSchema::new(["x", "y", "z"]).unwrap());
            for path in &stream {
                folded.merge_from(&train3(std::slice::from_ref(path))).unwrap();
            }
            prop_assert_eq!(folded, train3(&stream));
        }

        #[test]
        fn totals_and_boundary_mass_hold(stream in stream_strategy()) {
            let m = train3(&stream);
            for (node, stat) in m.nodes() {
                let incoming: u64 = m.parents(&node).unwrap().iter().map(|(_, f)| f).sum();
                let outgoing: u64 = m.children(&node).unwrap().iter().map(|(_, f)| f).sum();
                prop_assert_eq!(stat.in_total, incoming);
                prop_assert_eq!(stat.out_total, outgoing);
            }
            for boundary in 1..=3 {
                let mass: u64 = m.edges().iter().filter(|e| e.child.level == boundary).map(|e| e.freq).sum();
                prop_assert_eq!(mass, m.n());
            }
        }
    }
}
