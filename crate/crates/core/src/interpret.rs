//! Atom-level probes: embedding similarity and gradient attribution.

use std::collections::VecDeque;

use mpnp_autodiff::Tape;
use mpnp_chem::{MolecularGraph, NODE_FEATURE_DIM};

use crate::encoder::ForwardMode;
use crate::error::Result;
use crate::metrics::pearson;
use crate::model::{Model, PairBatch};

/// Pairwise Pearson correlation between atom embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub size: usize,
    /// Row-major `size × size`; NaN where undefined.
    pub values: Vec<f64>,
    /// Atoms whose embedding is constant across dimensions.
    pub constant: Vec<bool>,
}

impl SimilarityMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size + b]
    }

    /// Mean over unordered pairs `a ≠ b` selected by `keep`.
    pub fn mean_where(&self, keep: impl Fn(usize, usize) -> bool) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for a in 0..self.size {
            for b in a + 1..self.size {
                let v = self.get(a, b);
                if keep(a, b) && !v.is_nan() {
                    sum += v;
                    n += 1;
                }
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }

    /// Tab-separated table, one row per atom.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for a in 0..self.size {
            let row: Vec<String> = (0..self.size).map(|b| format!("{:.6}", self.get(a, b))).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// `states` is row-major `atoms × width`.
pub fn atom_similarity_matrix(states: &[f64], width: usize) -> SimilarityMatrix {
    let size = if width == 0 { 0 } else { states.len() / width };
    let row = |a: usize| &states[a * width..(a + 1) * width];
    let constant: Vec<bool> = (0..size).map(|a| row(a).iter().all(|&x| x == row(a)[0])).collect();
    let mut values = vec![f64::NAN; size * size];
    for a in 0..size {
        for b in a..size {
            if constant[a] || constant[b] {
                continue;
            }
            let r = if a == b { 1.0 } else { pearson(row(a), row(b)).unwrap_or(f64::NAN) };
            values[a * size + b] = r;
            values[b * size + a] = r;
        }
    }
    SimilarityMatrix { size, values, constant }
}

/// Node states after the last block, deterministic mode.
pub fn final_node_states(model: &Model, graph: &MolecularGraph) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let (encoded, _, _) = model.encode_graphs(&mut tape, &[graph], ForwardMode::eval())?;
    let last = *encoded.node_states.last().expect("at least one block");
    Ok(tape.value(last).values().to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoleculeAttribution {
    /// Normalized to sum to 1.
    pub scores: Vec<f64>,
    /// Gradient was zero everywhere; scores are uniform.
    pub uniform_fallback: bool,
    pub top_atom: usize,
    /// Atoms within `radius` bonds of the top atom, sorted.
    pub neighborhood: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    pub left: MoleculeAttribution,
    pub right: MoleculeAttribution,
    pub mu: f64,
}

fn within_radius(g: &MolecularGraph, start: usize, radius: usize) -> Vec<usize> {
    let adj = g.neighbors();
    let mut dist = vec![usize::MAX; g.num_atoms()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(a) = queue.pop_front() {
        if dist[a] == radius {
            continue;
        }
        for &b in &adj[a] {
            if dist[b] == usize::MAX {
                dist[b] = dist[a] + 1;
                queue.push_back(b);
            }
        }
    }
    (0..g.num_atoms()).filter(|&a| dist[a] != usize::MAX).collect()
}

fn summarize(g: &MolecularGraph, norms: Vec<f64>, radius: usize) -> MoleculeAttribution {
    let total: f64 = norms.iter().sum();
    let n = norms.len();
    let (scores, uniform_fallback) = if total > 0.0 {
        (norms.iter().map(|x| x / total).collect(), false)
    } else {
        (vec![1.0 / n as f64; n], true)
    };
    let top_atom = crate::metrics::argmax(&scores);
    MoleculeAttribution {
        neighborhood: within_radius(g, top_atom, radius),
        scores,
        uniform_fallback,
        top_atom,
    }
}

/// Per-atom `‖∂μ/∂x_v‖₂` over the node input features, from one reverse
/// sweep in deterministic mode.
pub fn atom_attribution(
    model: &Model,
    left: &MolecularGraph,
    right: &MolecularGraph,
    relation: usize,
    radius: usize,
) -> Result<Attribution> {
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, &PairBatch::single(left, right, relation), ForwardMode::eval(), true)?;
    let mu = tape.value(f.mu).values()[0];
    let root = tape.sum(f.mu);
    let grads = tape.backward(root)?;
    let g = grads.get_or_zeros(f.node_input, f.batch.num_nodes() * NODE_FEATURE_DIM);
    let norms: Vec<f64> = g
        .chunks(NODE_FEATURE_DIM)
        .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let split = left.num_atoms();
    Ok(Attribution {
        left: summarize(left, norms[..split].to_vec(), radius),
        right: summarize(right, norms[split..].to_vec(), radius),
        mu,
    })
}
