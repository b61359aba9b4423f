//! Stacked encoder blocks: projection, bond-to-bond message passing with
//! gated node updates, attention pooling and a Gaussian readout per block.
//!
//! All functions record onto a caller-owned [`Tape`] and operate on a whole
//! [`GraphBatch`] at once. Rows of node tensors follow batch node order, rows
//! of arc tensors follow batch arc order.

use mpnp_autodiff::{BatchNormMode, BatchStats, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::graph::GraphBatch;

/// Log-variance outputs are clamped into this range before `exp`.
pub const LOG_VAR_BOUNDS: (f64, f64) = (-10.0, 10.0);

/// Input projection parameters.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    /// `d_v × d_h`, no bias (batch norm follows).
    pub node_weight: Var,
    pub bn_gamma: Var,
    pub bn_beta: Var,
    pub prelu_slope: Var,
    /// `d_e × d_h`.
    pub edge_weight: Var,
    pub edge_bias: Var,
}

/// GRU cell parameters with gates packed as `[r | z | n]` columns.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    /// `d_h × 3d_h`, applied to the aggregated message.
    pub w_ih: Var,
    /// `d_h × 3d_h`, applied to the previous state.
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub gru: GruVars,
    /// `d_h × d_h` scorer projection.
    pub pool_w1: Var,
    /// `d_h × 1` scorer output.
    pub pool_w2: Var,
    pub mean_weight: Var,
    pub mean_bias: Var,
    pub logvar_weight: Var,
    pub logvar_bias: Var,
}

/// Result of [`project_features`].
pub struct Projected {
    /// `|V| × d_h`.
    pub nodes: Var,
    /// `|arcs| × d_h`; both arcs of a bond carry the same row.
    pub arcs: Var,
    pub batch_stats: Option<BatchStats>,
}

/// `x⁽⁰⁾ = PReLU(BN(x·W_v))`, `e⁽⁰⁾ = e·W_e + b_e` (per arc).
pub fn project_features(
    tape: &mut Tape,
    batch: &GraphBatch,
    node_input: Var,
    edge_input: Var,
    p: &ProjectionVars,
    bn: BatchNormMode<'_>,
) -> Result<Projected> {
    let h = tape.linear(node_input, p.node_weight, None)?;
    let (h, batch_stats) = tape.batch_norm(h, p.bn_gamma, p.bn_beta, bn)?;
    let nodes = tape.prelu(h, p.prelu_slope)?;
    let bonds = tape.linear(edge_input, p.edge_weight, Some(p.edge_bias))?;
    let arcs = tape.gather_rows(bonds, &batch.arc_bond)?;
    Ok(Projected {
        nodes,
        arcs,
        batch_stats,
    })
}

/// `m_uv = e_uv + ½(x_u + x_v)` for every arc.
pub fn message_init(tape: &mut Tape, batch: &GraphBatch, nodes: Var, arcs: Var) -> Result<Var> {
    let xs = tape.gather_rows(nodes, &batch.arc_src)?;
    let xd = tape.gather_rows(nodes, &batch.arc_dst)?;
    let both = tape.add(xs, xd)?;
    let half = tape.scale(both, 0.5);
    Ok(tape.add(arcs, half)?)
}

/// `m'_uv = m_uv + Σ m_b` over the line-graph neighbors `b` of the arc's bond.
///
/// The two arcs of a bond hold equal messages, so each neighbor bond
/// contributes its forward arc's row.
pub fn message_aggregate(tape: &mut Tape, batch: &GraphBatch, messages: Var) -> Result<Var> {
    let forward_arcs: Vec<usize> = (0..batch.num_bonds()).map(|b| 2 * b).collect();
    let per_bond = tape.gather_rows(messages, &forward_arcs)?;
    let incoming = tape.gather_rows(per_bond, &batch.line_src)?;
    let neighbor_sum = tape.scatter_sum(incoming, &batch.line_dst, batch.num_bonds())?;
    let per_arc = tape.gather_rows(neighbor_sum, &batch.arc_bond)?;
    Ok(tape.add(messages, per_arc)?)
}

/// `Δx_v = Σ m'_uv` over arcs entering `v`.
pub fn aggregate_to_nodes(tape: &mut Tape, batch: &GraphBatch, refined: Var) -> Result<Var> {
    Ok(tape.scatter_sum(refined, &batch.arc_dst, batch.num_nodes())?)
}

/// Gated recurrent update `h' = (1 − z)⊙n + z⊙h`.
pub fn gru_cell(tape: &mut Tape, input: Var, hidden: Var, w: &GruVars) -> Result<Var> {
    let d = tape.shape(hidden)[1];
    let gi = tape.linear(input, w.w_ih, Some(w.b_ih))?;
    let gh = tape.linear(hidden, w.w_hh, Some(w.b_hh))?;
    let (ir, iz, in_) = (
        tape.slice_cols(gi, 0, d)?,
        tape.slice_cols(gi, d, d)?,
        tape.slice_cols(gi, 2 * d, d)?,
    );
    let (hr, hz, hn) = (
        tape.slice_cols(gh, 0, d)?,
        tape.slice_cols(gh, d, d)?,
        tape.slice_cols(gh, 2 * d, d)?,
    );
    let r = tape.add(ir, hr)?;
    let r = tape.sigmoid(r);
    let z = tape.add(iz, hz)?;
    let z = tape.sigmoid(z);
    let gated = tape.mul(r, hn)?;
    let n = tape.add(in_, gated)?;
    let n = tape.tanh(n);
    let neg_z = tape.neg(z);
    let keep_new = tape.add_scalar(neg_z, 1.0);
    let a = tape.mul(keep_new, n)?;
    let b = tape.mul(z, hidden)?;
    Ok(tape.add(a, b)?)
}

/// Attention pooling: returns the `G × d_h` summaries and the per-node
/// weights.
pub fn attention_pool(
    tape: &mut Tape,
    batch: &GraphBatch,
    nodes: Var,
    w1: Var,
    w2: Var,
) -> Result<(Var, Var)> {
    if let Some(k) = (0..batch.num_graphs).find(|&k| batch.nodes_of(k).is_empty()) {
        return Err(CoreError::EmptyGraph(k));
    }
    let hidden = tape.matmul(nodes, w1)?;
    let hidden = tape.tanh(hidden);
    let scores = tape.matmul(hidden, w2)?;
    let weights = tape.segment_softmax(scores, &batch.membership, batch.num_graphs)?;
    let weighted = tape.mul_col(nodes, weights)?;
    let pooled = tape.scatter_sum(weighted, &batch.membership, batch.num_graphs)?;
    Ok((pooled, weights))
}

/// Output of [`stochastic_readout`].
pub struct Readout {
    /// `G × d_h` sample (the mean in deterministic mode).
    pub sample: Var,
    /// Per-graph KL divergence from the standard normal, length `G`.
    pub kl: Var,
    pub mean: Var,
    /// Clamped log-variance.
    pub log_var: Var,
}

/// Gaussian readout. With `noise` (row-major `G × d_h` standard-normal
/// draws) the sample is `μ + exp(½ log σ²)⊙ε`; without it, `μ`.
pub fn stochastic_readout(
    tape: &mut Tape,
    summary: Var,
    block: &BlockVars,
    noise: Option<Vec<f64>>,
) -> Result<Readout> {
    let mean = tape.linear(summary, block.mean_weight, Some(block.mean_bias))?;
    let raw = tape.linear(summary, block.logvar_weight, Some(block.logvar_bias))?;
    let log_var = tape.clamp(raw, LOG_VAR_BOUNDS.0, LOG_VAR_BOUNDS.1);
    let var = tape.exp(log_var);

    // ½ Σ_d (μ² + σ² − 1 − log σ²)
    let mu2 = tape.square(mean);
    let t = tape.add(mu2, var)?;
    let t = tape.sub(t, log_var)?;
    let t = tape.add_scalar(t, -1.0);
    let per_graph = tape.sum_axis(t, 1)?;
    let kl = tape.scale(per_graph, 0.5);

    let sample = match noise {
        None => mean,
        Some(eps) => {
            let shape = tape.shape(mean).to_vec();
            let eps = tape.constant(shape, eps)?;
            let half = tape.scale(log_var, 0.5);
            let std = tape.exp(half);
            let spread = tape.mul(std, eps)?;
            tape.add(mean, spread)?
        }
    };
    Ok(Readout {
        sample,
        kl,
        mean,
        log_var,
    })
}

/// Standard-normal draws for one block: one independent stream per graph,
/// keyed by the caller, so a graph's noise does not depend on what else is
/// in the batch.
pub fn block_noise(keys: &[u64], block: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(keys.len() * width);
    for &key in keys {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(key, block as u64));
        out.extend((0..width).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)));
    }
    out
}

/// SplitMix64 finalizer over a combined pair; spreads nearby keys apart.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(31);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// How batch normalization and sampling behave in one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardMode<'a> {
    /// Per-graph noise keys; `None` gives the deterministic mean readout.
    pub noise_keys: Option<&'a [u64]>,
    /// Use the current batch's statistics rather than the running ones.
    pub batch_statistics: bool,
}

impl<'a> ForwardMode<'a> {
    pub fn eval() -> Self {
        ForwardMode {
            noise_keys: None,
            batch_statistics: false,
        }
    }

    pub fn train(noise_keys: &'a [u64]) -> Self {
        ForwardMode {
            noise_keys: Some(noise_keys),
            batch_statistics: true,
        }
    }
}

/// Per-block outputs of [`encode`].
pub struct Encoded {
    /// One `G × d_h` sample per block.
    pub scales: Vec<Var>,
    /// Per-graph KL summed over blocks, length `G`.
    pub kl: Var,
    /// Per-block readouts (means, log-variances, per-block KL).
    pub readouts: Vec<Readout>,
    /// Node states at the end of every block.
    pub node_states: Vec<Var>,
    /// Attention-pool weights of every block.
    pub pool_weights: Vec<Var>,
    pub batch_stats: Option<BatchStats>,
}

/// Runs the projection and all blocks. Block `k` continues from the node
/// states left by block `k − 1`; edge states stay at their projection.
#[allow(clippy::too_many_arguments)]
pub fn encode(
    tape: &mut Tape,
    batch: &GraphBatch,
    node_input: Var,
    edge_input: Var,
    projection: &ProjectionVars,
    blocks: &[BlockVars],
    iterations: usize,
    bn: BatchNormMode<'_>,
    noise_keys: Option<&[u64]>,
) -> Result<Encoded> {
    if blocks.is_empty() || iterations == 0 {
        return Err(CoreError::Config("at least one block and one iteration are required".into()));
    }
    if let Some(keys) = noise_keys {
        if keys.len() != batch.num_graphs {
            return Err(CoreError::Config(format!(
                "{} noise keys for {} graphs",
                keys.len(),
                batch.num_graphs
            )));
        }
    }
    let Projected {
        nodes,
        arcs,
        batch_stats,
    } = project_features(tape, batch, node_input, edge_input, projection, bn)?;
    let width = tape.shape(nodes)[1];

    let mut x = nodes;
    let mut scales = Vec::with_capacity(blocks.len());
    let mut readouts = Vec::with_capacity(blocks.len());
    let mut node_states = Vec::with_capacity(blocks.len());
    let mut pool_weights = Vec::with_capacity(blocks.len());
    let mut kl_total: Option<Var> = None;
    for (k, block) in blocks.iter().enumerate() {
        for _ in 0..iterations {
            let m = message_init(tape, batch, x, arcs)?;
            let m = message_aggregate(tape, batch, m)?;
            let dx = aggregate_to_nodes(tape, batch, m)?;
            x = gru_cell(tape, dx, x, &block.gru)?;
        }
        node_states.push(x);
        let (summary, weights) = attention_pool(tape, batch, x, block.pool_w1, block.pool_w2)?;
        pool_weights.push(weights);
        let noise = noise_keys.map(|keys| block_noise(keys, k, width));
        let readout = stochastic_readout(tape, summary, block, noise)?;
        scales.push(readout.sample);
        kl_total = Some(match kl_total {
            None => readout.kl,
            Some(acc) => tape.add(acc, readout.kl)?,
        });
        readouts.push(readout);
    }
    Ok(Encoded {
        scales,
        kl: kl_total.expect("at least one block"),
        readouts,
        node_states,
        pool_weights,
        batch_stats,
    })
}
