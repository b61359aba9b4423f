//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use mpnp_chem::{molecule, MolecularGraph};
use mpnp_core::synth::{random_smiles, MoleculeSpec};
use mpnp_core::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random valid molecules with up to `max_atoms` heavy atoms.
pub fn random_molecules(count: usize, max_atoms: usize, seed: u64) -> Vec<(String, MolecularGraph)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = MoleculeSpec {
        min_atoms: 1,
        max_atoms,
        ..MoleculeSpec::default()
    };
    (0..count)
        .map(|_| {
            let s = random_smiles(&mut rng, &spec);
            let g = molecule(&s).unwrap_or_else(|e| panic!("{s}: {e}"));
            (s, g)
        })
        .collect()
}

/// Every unordered pair of bonds, kept when they share an endpoint.
pub fn brute_force_line_edges(g: &MolecularGraph) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..g.bonds.len() {
        for b in a + 1..g.bonds.len() {
            let (x, y) = (&g.bonds[a], &g.bonds[b]);
            if x.u == y.u || x.u == y.v || x.v == y.u || x.v == y.v {
                out.push((a, b));
            }
        }
    }
    out
}

/// `(wins + ½ ties) / (P·N)` over all positive-negative pairs.
pub fn pairwise_auroc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        if yi == 1.0 {
            p += 1;
        } else {
            n += 1;
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 0.0 {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

/// Sweeps cut-offs `k = 1..n` over the stable descending order, recounting
/// precision and recall from scratch at each cut, and sums `ΔR·P`. Recall
/// rises by exactly `1/P` at a positive, so the sum is accumulated as
/// precisions and divided by `P` once.
pub fn sweep_aupr(scores: &[f64], labels: &[f64]) -> f64 {
    // insertion sort: stable by construction
    let mut order: Vec<usize> = Vec::new();
    for i in 0..scores.len() {
        let at = order.iter().position(|&j| scores[j] < scores[i]).unwrap_or(order.len());
        order.insert(at, i);
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    let mut precision_sum = 0.0;
    let mut previous_recall_count = 0;
    for k in 1..=order.len() {
        let tp = order[..k].iter().filter(|&&i| labels[i] == 1.0).count();
        if tp > previous_recall_count {
            precision_sum += tp as f64 / k as f64;
            previous_recall_count = tp;
        }
    }
    precision_sum / positives as f64
}

/// Random score/label sets with deliberate ties; both classes present.
pub fn random_scored_sets(count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..60);
            let levels = rng.random_range(2..12);
            let mut labels: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
            labels[0] = 1.0;
            labels[1] = 0.0;
            let scores = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
            (scores, labels)
        })
        .collect()
}

/// Overwrites every parameter and buffer with random values, so biases and
/// normalization statistics are exercised too.
pub fn randomize(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for slot in 0..model.params.len() {
        for v in model.params.get_mut(slot).values_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
    }
    for slot in 0..model.params.buffer_names().len() {
        let positive = model.params.buffer_names()[slot].ends_with("var");
        for v in model.params.buffer_mut(slot) {
            *v = if positive { rng.random_range(0.5..2.0) } else { rng.random_range(-0.5..0.5) };
        }
    }
}

pub fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    while hi - lo > tol {
        if f(c) < f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - r * (hi - lo);
        d = lo + r * (hi - lo);
    }
    0.5 * (lo + hi)
}
