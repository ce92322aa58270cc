//! Directed connectivity graphs without self-loops.
//!
//! An edge `(j, i)` points from source node `i` to target node `j`, matching
//! the convention that the transfer from node `i` feeds node `j`. Nodes are
//! 0-based indices; a graph over `L` nodes has `L * (L - 1)` candidate edges.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedGraph {
    node_count: usize,
    /// Edges stored as (target, source) pairs.
    edges: BTreeSet<(usize, usize)>,
}

impl DirectedGraph {
    pub fn empty(node_count: usize) -> Self {
        Self {
            node_count,
            edges: BTreeSet::new(),
        }
    }

    /// Graph with every candidate edge present.
    pub fn complete(node_count: usize) -> Self {
        let mut g = Self::empty(node_count);
        for j in 0..node_count {
            for i in 0..node_count {
                if i != j {
                    g.edges.insert((j, i));
                }
            }
        }
        g
    }

    pub fn from_edges<I>(node_count: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Self::empty(node_count);
        for (j, i) in edges {
            g.add_edge(j, i)?;
        }
        Ok(g)
    }

    /// Inserts the edge from `source` into `target`.
    pub fn add_edge(&mut self, target: usize, source: usize) -> Result<()> {
        if target == source {
            return Err(Error::InvalidArgument(format!(
                "self-loop ({target}, {source}) not allowed"
            )));
        }
        if target >= self.node_count || source >= self.node_count {
            return Err(Error::InvalidArgument(format!(
                "edge ({target}, {source}) out of range for {} nodes",
                self.node_count
            )));
        }
        self.edges.insert((target, source));
        Ok(())
    }

    pub fn remove_edge(&mut self, target: usize, source: usize) -> bool {
        self.edges.remove(&(target, source))
    }

    pub fn contains(&self, target: usize, source: usize) -> bool {
        self.edges.contains(&(target, source))
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of possible directed edges excluding self-loops.
    pub fn candidate_edge_count(&self) -> usize {
        self.node_count * self.node_count.saturating_sub(1)
    }

    /// Iterates over `(target, source)` pairs in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Source nodes feeding `target`, ascending.
    pub fn parents(&self, target: usize) -> Vec<usize> {
        self.edges
            .range((target, 0)..(target + 1, 0))
            .map(|&(_, i)| i)
            .collect()
    }

    /// Edge-set intersection size with another graph over the same nodes.
    pub fn intersection_count(&self, other: &DirectedGraph) -> usize {
        self.edges.intersection(&other.edges).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_self_loops_and_out_of_range() {
        let mut g = DirectedGraph::empty(3);
        assert!(g.add_edge(1, 1).is_err());
        assert!(g.add_edge(3, 0).is_err());
        assert!(g.add_edge(0, 2).is_ok());
    }

    #[test]
    fn complete_graph_edge_count() {
        assert_eq!(DirectedGraph::complete(6).edge_count(), 30);
        assert_eq!(DirectedGraph::complete(20).edge_count(), 380);
    }

    #[test]
    fn parents_are_sorted_sources() {
        let g = DirectedGraph::from_edges(4, [(2, 3), (2, 0), (1, 0)]).unwrap();
        assert_eq!(g.parents(2), vec![0, 3]);
        assert_eq!(g.parents(1), vec![0]);
        assert!(g.parents(0).is_empty());
    }

    #[test]
    fn json_round_trip() {
        let g = DirectedGraph::from_edges(3, [(0, 1), (2, 1)]).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: DirectedGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(g, back);
    }
}
