//! Graph statistics: node count per level, arc count per level boundary,
//! observation count, and the highest-degree nodes of each level.

use std::fmt::Write as _;

use crate::graph::{Model, NodeRef};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsReport {
    /// `level_sizes[i]` is the node count of level `i + 1`.
    pub level_sizes: Vec<usize>,
    /// `boundary_edges[i]` counts arcs from level `i` into level `i + 1`.
    pub boundary_edges: Vec<usize>,
    pub n: u64,
    /// Per level, up to `top` nodes by degree (parents + children), ties by label.
    pub top_degree: Vec<Vec<(NodeRef, usize)>>,
}

impl StatsReport {
    pub fn compute(model: &Model, top: usize) -> Self {
        let m = model.levels();
        let level_sizes = (1..=m).map(|l| model.level_size(l)).collect();
        let boundary_edges = (1..=m).map(|b| model.boundary_edge_count(b)).collect();
        let mut top_degree = Vec::with_capacity(m);
        for level in 1..=m {
            let mut degrees: Vec<(NodeRef, usize)> = model
                .level_labels(level)
                .map(|label| {
                    let node = NodeRef::new(level, label);
                    let degree = model.parents(&node).map_or(0, |p| p.len()) + model.children(&node).map_or(0, |c| c.len());
                    (node, degree)
                })
                .collect();
            degrees.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.label.as_bytes().cmp(b.0.label.as_bytes())));
            degrees.truncate(top);
            top_degree.push(degrees);
        }
        Self { level_sizes, boundary_edges, n: model.n(), top_degree }
    }

    /// Arcs not incident to the synthetic root (the class-to-term arcs of
    /// a two-level model).
    pub fn edges(&self) -> usize {
        self.boundary_edges.iter().skip(1).sum()
    }

    /// `level1=.. level2=.. edges=.. n=..`
    pub fn summary_line(&self) -> String {
        let mut line = String::new();
        for (i, size) in self.level_sizes.iter().enumerate() {
            let _ = write!(line, "level{}={} ", i + 1, size);
        }
        let _ = write!(line, "edges={} n={}", self.edges(), self.n);
        line
    }

    /// Summary line followed by tab-separated `boundary` and `top` rows.
    pub fn render(&self) -> String {
        let mut out = self.summary_line();
        out.push('\n');
        for (i, count) in self.boundary_edges.iter().enumerate() {
            let _ = writeln!(out, "boundary\t{}\t{}", i + 1, count);
        }
        for (i, nodes) in self.top_degree.iter().enumerate() {
            for (node, degree) in nodes {
                let _ = writeln!(out, "top\t{}\t{}\t{}", i + 1, node.label, degree);
            }
        }
        out
    }
}
