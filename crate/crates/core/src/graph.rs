//! Line graphs and disjoint-union batching.
//!
//! Every undirected bond `b = {u, v}` is carried as two arcs, `2b: u→v` and
//! `2b+1: v→u`, which share the bond's features. Line-graph edges connect
//! bonds that share exactly one atom.

use mpnp_chem::{MolecularGraph, EDGE_FEATURE_DIM, NODE_FEATURE_DIM};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineGraph {
    /// Line node of each bond. Bonds map to themselves; kept explicit so
    /// callers never rely on that.
    pub node_of_bond: Vec<usize>,
    /// Unordered line-graph edges `(a, b)` with `a < b`, sorted.
    pub adjacency: Vec<(usize, usize)>,
    /// Incident bond indices for every atom.
    pub incidence: Vec<Vec<usize>>,
}

impl LineGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_of_bond.len()
    }

    /// Line-graph neighbors of every bond.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_nodes()];
        for &(a, b) in &self.adjacency {
            out[a].push(b);
            out[b].push(a);
        }
        out
    }
}

/// Builds the line graph from per-atom incidence lists, so the cost is
/// linear in the sum of squared degrees.
pub fn build_line_graph(g: &MolecularGraph) -> LineGraph {
    let incidence = g.incidence();
    let mut adjacency = Vec::new();
    for bonds in &incidence {
        for (i, &a) in bonds.iter().enumerate() {
            for &b in &bonds[i + 1..] {
                adjacency.push((a.min(b), a.max(b)));
            }
        }
    }
    // Two distinct bonds share at most one atom in a simple graph, so no pair
    // can come from two different atoms; sort for a canonical order.
    adjacency.sort_unstable();
    LineGraph {
        node_of_bond: (0..g.num_bonds()).collect(),
        adjacency,
        incidence,
    }
}

/// Several featurized molecules as one disjoint graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    pub num_graphs: usize,
    /// Row-major `num_nodes × NODE_FEATURE_DIM`.
    pub node_features: Vec<f64>,
    /// Row-major `num_bonds × EDGE_FEATURE_DIM`, one row per undirected bond.
    pub edge_features: Vec<f64>,
    /// First node of each graph, plus a final entry equal to `num_nodes`.
    pub node_offsets: Vec<usize>,
    /// First bond of each graph, plus a final entry equal to `num_bonds`.
    pub bond_offsets: Vec<usize>,
    /// Graph index of every node.
    pub membership: Vec<usize>,
    /// Global endpoints of every bond.
    pub bonds: Vec<(usize, usize)>,
    /// Source node, target node and bond of every arc.
    pub arc_src: Vec<usize>,
    pub arc_dst: Vec<usize>,
    pub arc_bond: Vec<usize>,
    /// Both orientations of every line-graph edge, as global bond indices.
    pub line_src: Vec<usize>,
    pub line_dst: Vec<usize>,
}

/// One graph recovered from a batch, in local indices.
#[derive(Clone, Debug, PartialEq)]
pub struct UnbatchedGraph {
    pub node_features: Vec<f64>,
    pub edge_features: Vec<f64>,
    pub bonds: Vec<(usize, usize)>,
    pub line_adjacency: Vec<(usize, usize)>,
}

impl GraphBatch {
    pub fn num_nodes(&self) -> usize {
        self.membership.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arc_src.len()
    }

    /// Nodes of graph `k` as a global index range.
    pub fn nodes_of(&self, k: usize) -> std::ops::Range<usize> {
        self.node_offsets[k]..self.node_offsets[k + 1]
    }

    pub fn unbatch(&self) -> Vec<UnbatchedGraph> {
        (0..self.num_graphs)
            .map(|k| {
                let (n0, n1) = (self.node_offsets[k], self.node_offsets[k + 1]);
                let (b0, b1) = (self.bond_offsets[k], self.bond_offsets[k + 1]);
                let mut line_adjacency: Vec<(usize, usize)> = self
                    .line_src
                    .iter()
                    .zip(&self.line_dst)
                    .filter(|(&a, &b)| a < b && (b0..b1).contains(&a))
                    .map(|(&a, &b)| (a - b0, b - b0))
                    .collect();
                line_adjacency.sort_unstable();
                UnbatchedGraph {
                    node_features: self.node_features[n0 * NODE_FEATURE_DIM..n1 * NODE_FEATURE_DIM].to_vec(),
                    edge_features: self.edge_features[b0 * EDGE_FEATURE_DIM..b1 * EDGE_FEATURE_DIM].to_vec(),
                    bonds: self.bonds[b0..b1].iter().map(|&(u, v)| (u - n0, v - n0)).collect(),
                    line_adjacency,
                }
            })
            .collect()
    }
}

pub fn batch_graphs(graphs: &[&MolecularGraph]) -> Result<GraphBatch> {
    let mut batch = GraphBatch {
        num_graphs: graphs.len(),
        node_features: Vec::new(),
        edge_features: Vec::new(),
        node_offsets: vec![0],
        bond_offsets: vec![0],
        membership: Vec::new(),
        bonds: Vec::new(),
        arc_src: Vec::new(),
        arc_dst: Vec::new(),
        arc_bond: Vec::new(),
        line_src: Vec::new(),
        line_dst: Vec::new(),
    };
    for (k, g) in graphs.iter().enumerate() {
        if g.num_atoms() == 0 {
            return Err(CoreError::EmptyGraph(k));
        }
        if !g.is_featurized() {
            let found = g.node_features.len() / g.num_atoms();
            return Err(CoreError::FeatureDim {
                index: k,
                expected: NODE_FEATURE_DIM,
                found,
            });
        }
        let n0 = batch.membership.len();
        let b0 = batch.bonds.len();
        batch.node_features.extend_from_slice(&g.node_features);
        batch.edge_features.extend_from_slice(&g.edge_features);
        batch.membership.extend(std::iter::repeat_n(k, g.num_atoms()));
        for (i, bond) in g.bonds.iter().enumerate() {
            let (u, v, b) = (bond.u + n0, bond.v + n0, b0 + i);
            batch.bonds.push((u, v));
            batch.arc_src.extend([u, v]);
            batch.arc_dst.extend([v, u]);
            batch.arc_bond.extend([b, b]);
        }
        for (a, b) in build_line_graph(g).adjacency {
            batch.line_src.extend([a + b0, b + b0]);
            batch.line_dst.extend([b + b0, a + b0]);
        }
        batch.node_offsets.push(batch.membership.len());
        batch.bond_offsets.push(batch.bonds.len());
    }
    Ok(batch)
}
