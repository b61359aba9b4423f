mod common;

use mpnp_chem::{molecule, MolecularGraph, NODE_FEATURE_DIM};
use mpnp_core::interpret::{atom_attribution, atom_similarity_matrix, final_node_states};
use mpnp_core::{Model, ModelConfig, PairBatch, TrainConfig};

fn model(seed: u64) -> Model {
    let config = TrainConfig {
        hidden_dim: 8,
        ..TrainConfig::default()
    };
    let mut m = Model::new(ModelConfig::new(&config, 2), seed).unwrap();
    common::randomize(&mut m, seed);
    m
}

/// `‖∂μ/∂x_v‖` by central differences over each feature of atom `v`.
fn numeric_norms(m: &Model, left: &MolecularGraph, right: &MolecularGraph, on_left: bool) -> Vec<f64> {
    let h = 1e-6;
    let target = if on_left { left } else { right };
    let mu = |g: &MolecularGraph| {
        let pair = if on_left {
            PairBatch::single(g, right, 1)
        } else {
            PairBatch::single(left, g, 1)
        };
        m.predict(&pair).unwrap()[0].mu
    };
    (0..target.num_atoms())
        .map(|v| {
            let mut sq = 0.0;
            for f in 0..NODE_FEATURE_DIM {
                let idx = v * NODE_FEATURE_DIM + f;
                let mut up = target.clone();
                up.node_features[idx] += h;
                let mut down = target.clone();
                down.node_features[idx] -= h;
                let d = (mu(&up) - mu(&down)) / (2.0 * h);
                sq += d * d;
            }
            sq.sqrt()
        })
        .collect()
}

#[test]
fn attribution_matches_finite_differences() {
    let m = model(5);
    let (left, right) = (molecule("CO").unwrap(), molecule("CC(=O)N").unwrap());
    let attr = atom_attribution(&m, &left, &right, 1, 2).unwrap();
    for (side, on_left) in [(&attr.left, true), (&attr.right, false)] {
        let numeric = numeric_norms(&m, &left, &right, on_left);
        let total: f64 = numeric.iter().sum();
        assert!(total > 0.0);
        for (a, n) in side.scores.iter().zip(&numeric) {
            assert!((a - n / total).abs() < 1e-5, "{a} vs {}", n / total);
        }
        let numeric_top = numeric
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(side.top_atom, numeric_top);
        assert!((side.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(side.neighborhood.contains(&side.top_atom));
    }
    let predicted = m.predict(&PairBatch::single(&left, &right, 1)).unwrap()[0].mu;
    assert_eq!(attr.mu, predicted);
}

#[test]
fn neighborhood_respects_the_radius() {
    let m = model(6);
    let chain = molecule("CCCCCCCC").unwrap();
    let attr = atom_attribution(&m, &chain, &chain, 0, 1).unwrap();
    let top = attr.left.top_atom;
    let expected: Vec<usize> = (top.saturating_sub(1)..=(top + 1).min(7)).collect();
    assert_eq!(attr.left.neighborhood, expected);
}

#[test]
fn similarity_matrix_properties() {
    let m = model(7);
    let g = molecule("c1ccccc1CC(=O)O").unwrap();
    let states = final_node_states(&m, &g).unwrap();
    let sim = atom_similarity_matrix(&states, m.config.hidden_dim);
    assert_eq!(sim.size, g.num_atoms());
    for a in 0..sim.size {
        if !sim.constant[a] {
            assert_eq!(sim.get(a, a), 1.0);
        }
        for b in 0..sim.size {
            let v = sim.get(a, b);
            assert!(v.is_nan() || (-1.0..=1.0).contains(&v));
            assert_eq!(v.to_bits(), sim.get(b, a).to_bits());
        }
    }
}

#[test]
fn constant_embeddings_are_flagged() {
    let sim = atom_similarity_matrix(&[1.0, 1.0, 1.0, 0.0, 2.0, 4.0, 1.0, 3.0, 5.0], 3);
    assert_eq!(sim.constant, vec![true, false, false]);
    assert!(sim.get(0, 1).is_nan());
    assert!((sim.get(1, 2) - 1.0).abs() < 1e-12);
    assert!((sim.mean_where(|_, _| true) - 1.0).abs() < 1e-12);
}
