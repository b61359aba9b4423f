mod common;

use mpnp_autodiff::{Tape, Tensor, Var};
use mpnp_chem::{molecule, NODE_FEATURE_DIM};
use mpnp_core::encoder::{
    aggregate_to_nodes, attention_pool, gru_cell, message_aggregate, message_init, stochastic_readout, BlockVars,
    GruVars,
};
use mpnp_core::graph::batch_graphs;
use mpnp_core::{ForwardMode, Model, ModelConfig, TrainConfig};

fn leaf(tape: &mut Tape, shape: &[usize], values: Vec<f64>) -> Var {
    tape.leaf(&Tensor::new(shape.to_vec(), values).unwrap())
}

fn zeros(tape: &mut Tape, shape: &[usize]) -> Var {
    leaf(tape, shape, vec![0.0; shape.iter().product()])
}

fn values(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).values().to_vec()
}

#[test]
fn gru_with_zero_weights_halves_the_hidden_state() {
    // r = z = σ(0) = ½ and n = tanh(0) = 0, so h' = ½h
    let mut t = Tape::new();
    let d = 3;
    let x = leaf(&mut t, &[2, d], vec![0.3, -1.0, 2.0, 0.1, 0.2, 0.3]);
    let h = leaf(&mut t, &[2, d], vec![1.0, -2.0, 4.0, 0.5, 0.0, -0.5]);
    let w = GruVars {
        w_ih: zeros(&mut t, &[d, 3 * d]),
        w_hh: zeros(&mut t, &[d, 3 * d]),
        b_ih: zeros(&mut t, &[3 * d]),
        b_hh: zeros(&mut t, &[3 * d]),
    };
    let out = gru_cell(&mut t, x, h, &w).unwrap();
    assert_eq!(values(&t, out), vec![0.5, -1.0, 2.0, 0.25, 0.0, -0.25]);
}

#[test]
fn gru_update_gate_saturated_keeps_hidden() {
    let mut t = Tape::new();
    let d = 2;
    let x = leaf(&mut t, &[1, d], vec![0.7, -0.4]);
    let h = leaf(&mut t, &[1, d], vec![0.9, -0.3]);
    let mut b = vec![0.0; 3 * d];
    // z block sits in the middle third
    b[d..2 * d].iter_mut().for_each(|v| *v = 60.0);
    let w = GruVars {
        w_ih: zeros(&mut t, &[d, 3 * d]),
        w_hh: zeros(&mut t, &[d, 3 * d]),
        b_ih: leaf(&mut t, &[3 * d], b),
        b_hh: zeros(&mut t, &[3 * d]),
    };
    let out = gru_cell(&mut t, x, h, &w).unwrap();
    for (a, e) in values(&t, out).iter().zip([0.9, -0.3]) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn attention_pool_is_the_mean_when_scores_tie() {
    let graphs = [molecule("CCO").unwrap(), molecule("C").unwrap()];
    let batch = batch_graphs(&graphs.iter().collect::<Vec<_>>()).unwrap();
    let mut t = Tape::new();
    let nodes = leaf(&mut t, &[4, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0, -1.0, 7.0]);
    let w1 = leaf(&mut t, &[2, 2], vec![0.3, 0.1, -0.2, 0.5]);
    let w2 = zeros(&mut t, &[2, 1]);
    let (pooled, weights) = attention_pool(&mut t, &batch, nodes, w1, w2).unwrap();
    let p = values(&t, pooled);
    assert!((p[0] - 3.0).abs() < 1e-12 && (p[1] - 5.0).abs() < 1e-12);
    assert_eq!(&p[2..], &[-1.0, 7.0]);
    let w = values(&t, weights);
    assert!(w[..3].iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    assert_eq!(w[3], 1.0);
}

#[test]
fn attention_pool_weights_are_distributions() {
    let graphs = common::random_molecules(6, 10, 3);
    let refs: Vec<_> = graphs.iter().map(|(_, g)| g).collect();
    let batch = batch_graphs(&refs).unwrap();
    let mut t = Tape::new();
    let n = batch.num_nodes();
    let nodes = leaf(&mut t, &[n, 3], (0..3 * n).map(|i| (i as f64 * 0.37).sin()).collect());
    let w1 = leaf(&mut t, &[3, 3], vec![0.2, -0.4, 0.9, 1.1, 0.3, -0.7, 0.5, 0.5, -0.1]);
    let w2 = leaf(&mut t, &[3, 1], vec![1.5, -2.0, 0.7]);
    let (_, weights) = attention_pool(&mut t, &batch, nodes, w1, w2).unwrap();
    let w = values(&t, weights);
    for g in 0..batch.num_graphs {
        let total: f64 = batch.nodes_of(g).map(|v| w[v]).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

fn readout_kl(mean: Vec<f64>, log_var: Vec<f64>) -> f64 {
    // identity summary → identity maps, biases carry the values
    let d = mean.len();
    let mut t = Tape::new();
    let summary = zeros(&mut t, &[1, d]);
    let block = BlockVars {
        gru: GruVars {
            w_ih: zeros(&mut t, &[d, 3 * d]),
            w_hh: zeros(&mut t, &[d, 3 * d]),
            b_ih: zeros(&mut t, &[3 * d]),
            b_hh: zeros(&mut t, &[3 * d]),
        },
        pool_w1: zeros(&mut t, &[d, d]),
        pool_w2: zeros(&mut t, &[d, 1]),
        mean_weight: zeros(&mut t, &[d, d]),
        mean_bias: leaf(&mut t, &[d], mean),
        logvar_weight: zeros(&mut t, &[d, d]),
        logvar_bias: leaf(&mut t, &[d], log_var),
    };
    let r = stochastic_readout(&mut t, summary, &block, None).unwrap();
    values(&t, r.kl)[0]
}

#[test]
fn readout_kl_closed_forms() {
    assert_eq!(readout_kl(vec![0.0; 4], vec![0.0; 4]), 0.0);
    assert!((readout_kl(vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4]) - 0.5).abs() < 1e-15);
    let ln2 = std::f64::consts::LN_2;
    let expected = 0.5 * (2.0 - 1.0 - ln2);
    assert!((readout_kl(vec![0.0; 4], vec![ln2, 0.0, 0.0, 0.0]) - expected).abs() < 1e-15);
    assert!((expected - 0.1534).abs() < 1e-4);
}

#[test]
fn readout_log_variance_is_clamped() {
    let kl = readout_kl(vec![0.0], vec![-50.0]);
    // clamped to −10: ½(e^−10 − 1 + 10)
    assert!((kl - 0.5 * ((-10f64).exp() + 9.0)).abs() < 1e-12);
}

#[test]
fn messages_on_propane() {
    let g = molecule("CCC").unwrap();
    let batch = batch_graphs(&[&g]).unwrap();
    let mut t = Tape::new();
    let nodes = leaf(&mut t, &[3, 1], vec![1.0, 2.0, 4.0]);
    // bond 0 = (0,1), bond 1 = (1,2); arcs 2b and 2b+1 share edge rows
    let arcs = leaf(&mut t, &[4, 1], vec![10.0, 10.0, 20.0, 20.0]);
    let m = message_init(&mut t, &batch, nodes, arcs).unwrap();
    assert_eq!(values(&t, m), vec![11.5, 11.5, 23.0, 23.0]);
    let refined = message_aggregate(&mut t, &batch, m).unwrap();
    assert_eq!(values(&t, refined), vec![34.5, 34.5, 34.5, 34.5]);
    let dx = aggregate_to_nodes(&mut t, &batch, refined).unwrap();
    // atom 1 receives one arc from each bond
    let arc_dst = &batch.arc_dst;
    let expected: Vec<f64> = (0..3).map(|v| 34.5 * arc_dst.iter().filter(|&&d| d == v).count() as f64).collect();
    assert_eq!(values(&t, dx), expected);
    assert_eq!(expected, vec![34.5, 69.0, 34.5]);
}

fn model(config: &TrainConfig, seed: u64) -> Model {
    let mut m = Model::new(ModelConfig::new(config, 2), seed).unwrap();
    common::randomize(&mut m, seed + 100);
    m
}

fn scales(model: &Model, graphs: &[&mpnp_chem::MolecularGraph], mode: ForwardMode<'_>) -> Vec<Vec<f64>> {
    let mut t = Tape::new();
    let (enc, _, _) = model.encode_graphs(&mut t, graphs, mode).unwrap();
    enc.scales.iter().map(|&v| values(&t, v)).collect()
}

#[test]
fn single_block_on_a_single_atom() {
    let config = TrainConfig {
        blocks: 1,
        ..TrainConfig::default()
    };
    let m = model(&config, 1);
    let g = molecule("[Na+]").unwrap();
    let s = scales(&m, &[&g], ForwardMode::eval());
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].len(), config.hidden_dim);
    assert!(s[0].iter().all(|v| v.is_finite()));
}

#[test]
fn batched_encoding_matches_one_at_a_time() {
    let m = model(&TrainConfig::default(), 2);
    let mols = common::random_molecules(5, 12, 9);
    let refs: Vec<_> = mols.iter().map(|(_, g)| g).collect();
    let together = scales(&m, &refs, ForwardMode::eval());
    let d = m.config.hidden_dim;
    for (i, g) in refs.iter().enumerate() {
        let alone = scales(&m, &[g], ForwardMode::eval());
        for (k, scale) in alone.iter().enumerate() {
            for (a, b) in scale.iter().zip(&together[k][i * d..(i + 1) * d]) {
                assert!((a - b).abs() <= 1e-12, "graph {i} scale {k}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn readout_noise_does_not_depend_on_batch_mates() {
    let m = model(&TrainConfig::default(), 3);
    let mols = common::random_molecules(3, 8, 10);
    let refs: Vec<_> = mols.iter().map(|(_, g)| g).collect();
    let keys = [11u64, 22, 33];
    let mode = |k| ForwardMode {
        noise_keys: Some(k),
        batch_statistics: false,
    };
    let together = scales(&m, &refs, mode(&keys));
    let d = m.config.hidden_dim;
    let alone = scales(&m, &[refs[1]], mode(&keys[1..2]));
    for (k, scale) in alone.iter().enumerate() {
        for (a, b) in scale.iter().zip(&together[k][d..2 * d]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    // and the noise actually moved the sample off the mean
    let mean = scales(&m, &[refs[1]], ForwardMode::eval());
    assert_ne!(mean, alone);
}

#[test]
fn encoding_is_deterministic() {
    let m = model(&TrainConfig::default(), 4);
    let mols = common::random_molecules(4, 10, 12);
    let refs: Vec<_> = mols.iter().map(|(_, g)| g).collect();
    assert_eq!(scales(&m, &refs, ForwardMode::eval()), scales(&m, &refs, ForwardMode::eval()));
    let keys = [5u64, 6, 7, 8];
    assert_eq!(scales(&m, &refs, ForwardMode::train(&keys)), scales(&m, &refs, ForwardMode::train(&keys)));
}

#[test]
fn receptive_field_grows_two_bonds_per_iteration() {
    // On a chain, one iteration reaches atoms two bonds away: an arc's
    // refined message includes the bonds adjacent to both of its atoms.
    for iterations in 1..=3 {
        let config = TrainConfig {
            blocks: 1,
            iterations,
            ..TrainConfig::default()
        };
        let m = model(&config, 5);
        let chain = molecule("CCCCCCCCCCCC").unwrap();
        let mut bumped = chain.clone();
        for f in &mut bumped.node_features[..NODE_FEATURE_DIM] {
            *f += 0.37;
        }
        let states = |g| {
            let mut t = Tape::new();
            let (enc, _, _) = m.encode_graphs(&mut t, &[g], ForwardMode::eval()).unwrap();
            values(&t, enc.node_states[0])
        };
        let (a, b) = (states(&chain), states(&bumped));
        let d = config.hidden_dim;
        let radius = 2 * iterations;
        for atom in 0..chain.num_atoms() {
            let same = a[atom * d..(atom + 1) * d] == b[atom * d..(atom + 1) * d];
            assert_eq!(same, atom > radius, "T={iterations} atom {atom}");
        }
    }
}
