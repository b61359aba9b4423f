//! Every primitive is checked against central finite differences on random
//! conforming shapes.

use mpnp_autodiff::{check_gradients, BatchNormMode, Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // Keep away from zero so kinked primitives are probed on smooth pieces.
    let values = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap()
}

/// Reduces any output to a scalar through fixed random weights so every
/// output element carries a distinct adjoint.
fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    // Offset so the weights never coincide with an input drawn from `seed`.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff5e7);
    let w = random(&mut rng, &shape);
    let w = t.leaf(&w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn assert_passes<F>(name: &str, f: F, inputs: Vec<Tensor>)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let report = check_gradients(f, &inputs, STEP, TOL).unwrap();
    assert!(
        report.passed(),
        "{name}: max relative error {} ({:?})",
        report.max_relative_error,
        report.failures.first()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_and_transpose(n in 1usize..5, k in 1usize..5, m in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[n, k]);
        let b = random(&mut rng, &[k, m]);
        assert_passes("matmul", |t, v| { let y = t.matmul(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), b]);
        assert_passes("transpose", |t, v| { let y = t.transpose(v[0])?; weighted_sum(t, y, seed) }, vec![a]);
    }

    #[test]
    fn elementwise_binary(n in 1usize..5, m in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[n, m]);
        let b = random(&mut rng, &[n, m]);
        assert_passes("add", |t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), b.clone()]);
        assert_passes("sub", |t, v| { let y = t.sub(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), b.clone()]);
        assert_passes("mul", |t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a, b]);
    }

    #[test]
    fn broadcasts(n in 1usize..5, m in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[n, m]);
        let row = random(&mut rng, &[m]);
        let col = random(&mut rng, &[n]);
        assert_passes("add_row", |t, v| { let y = t.add_row(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), row]);
        assert_passes("mul_col", |t, v| { let y = t.mul_col(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a, col]);
    }

    #[test]
    fn pointwise(n in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, 2]);
        let p = positive(&mut rng, &[n, 2]);
        assert_passes("scale", |t, v| { let y = t.scale(v[0], -1.7); weighted_sum(t, y, seed) }, vec![x.clone()]);
        assert_passes("add_scalar", |t, v| { let y = t.add_scalar(v[0], 0.3); weighted_sum(t, y, seed) }, vec![x.clone()]);
        assert_passes("sigmoid", |t, v| { let y = t.sigmoid(v[0]); weighted_sum(t, y, seed) }, vec![x.clone()]);
        assert_passes("tanh", |t, v| { let y = t.tanh(v[0]); weighted_sum(t, y, seed) }, vec![x.clone()]);
        assert_passes("exp", |t, v| { let y = t.exp(v[0]); weighted_sum(t, y, seed) }, vec![x.clone()]);
        assert_passes("log", |t, v| { let y = t.log(v[0]); weighted_sum(t, y, seed) }, vec![p]);
        assert_passes("square", |t, v| { let y = t.square(v[0]); weighted_sum(t, y, seed) }, vec![x.clone()]);
        assert_passes("softplus", |t, v| { let y = t.softplus(v[0]); weighted_sum(t, y, seed) }, vec![x.clone()]);
        assert_passes("clamp", |t, v| { let y = t.clamp(v[0], -1.0, 1.0); weighted_sum(t, y, seed) }, vec![x]);
    }

    #[test]
    fn prelu_with_learnable_slope(n in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, 3]);
        let slope = Tensor::vector(vec![0.25]);
        assert_passes("prelu", |t, v| { let y = t.prelu(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![x, slope]);
    }

    #[test]
    fn softmax_both_axes(n in 1usize..5, m in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[n, m]);
        for axis in 0..2 {
            assert_passes("softmax", |t, v| { let y = t.softmax(v[0], axis)?; weighted_sum(t, y, seed) }, vec![a.clone()]);
        }
        let v1 = random(&mut rng, &[m]);
        assert_passes("softmax1d", |t, v| { let y = t.softmax(v[0], 0)?; weighted_sum(t, y, seed) }, vec![v1]);
    }

    #[test]
    fn softmax_is_a_distribution(n in 1usize..6, m in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = random(&mut rng, &[n, m]);
        a.values_mut().iter_mut().for_each(|v| *v *= 30.0);
        let mut tape = Tape::new();
        let x = tape.leaf(&a);
        let y = tape.softmax(x, 1).unwrap();
        for row in tape.value(y).values().chunks(m) {
            prop_assert!(row.iter().all(|p| *p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn segment_softmax_gradient(n in 1usize..8, groups in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n]);
        let segments: Vec<usize> = (0..n).map(|i| i % groups).collect();
        assert_passes(
            "segment_softmax",
            |t, v| { let y = t.segment_softmax(v[0], &segments, groups)?; weighted_sum(t, y, seed) },
            vec![x],
        );
    }

    // Two rows normalize to ±1 (up to eps) whatever the input, leaving an
    // input gradient too small for finite differences to resolve.
    #[test]
    fn batch_norm_train_and_eval(n in 3usize..7, m in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, m]);
        let gamma = random(&mut rng, &[m]);
        let beta = random(&mut rng, &[m]);
        assert_passes(
            "batch_norm(train)",
            |t, v| { let (y, _) = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train)?; weighted_sum(t, y, seed) },
            vec![x.clone(), gamma.clone(), beta.clone()],
        );
        let rm: Vec<f64> = (0..m).map(|j| 0.1 * j as f64).collect();
        let rv: Vec<f64> = (0..m).map(|j| 0.5 + j as f64).collect();
        assert_passes(
            "batch_norm(eval)",
            |t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval { running_mean: &rm, running_var: &rv })?;
                weighted_sum(t, y, seed)
            },
            vec![x, gamma, beta],
        );
    }

    #[test]
    fn concat_slice_reshape(n in 1usize..4, m in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[n, m]);
        let b = random(&mut rng, &[n, m + 1]);
        let c = random(&mut rng, &[n + 1, m]);
        assert_passes("concat(cols)", |t, v| { let y = t.concat(&[v[0], v[1]], 1)?; weighted_sum(t, y, seed) }, vec![a.clone(), b.clone()]);
        assert_passes("concat(rows)", |t, v| { let y = t.concat(&[v[0], v[1]], 0)?; weighted_sum(t, y, seed) }, vec![a.clone(), c]);
        assert_passes("slice_cols", |t, v| { let y = t.slice_cols(v[0], 1, m)?; weighted_sum(t, y, seed) }, vec![b]);
        assert_passes("reshape", |t, v| { let y = t.reshape(v[0], &[n * m])?; weighted_sum(t, y, seed) }, vec![a]);
    }

    #[test]
    fn gather_and_scatter(rows in 1usize..5, picks in 1usize..8, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[rows, 3]);
        let index: Vec<usize> = (0..picks).map(|_| rng.random_range(0..rows)).collect();
        assert_passes("gather_rows", |t, v| { let y = t.gather_rows(v[0], &index)?; weighted_sum(t, y, seed) }, vec![a]);
        let src = random(&mut rng, &[picks, 2]);
        assert_passes("scatter_sum", |t, v| { let y = t.scatter_sum(v[0], &index, rows)?; weighted_sum(t, y, seed) }, vec![src]);
        let vec1 = random(&mut rng, &[picks]);
        assert_passes("scatter_sum(1d)", |t, v| { let y = t.scatter_sum(v[0], &index, rows)?; weighted_sum(t, y, seed) }, vec![vec1]);
    }

    #[test]
    fn reductions(n in 1usize..5, m in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[n, m]);
        assert_passes("sum", |t, v| { let y = t.sum(v[0]); let y = t.square(y); Ok(t.sum(y)) }, vec![a.clone()]);
        assert_passes("mean", |t, v| { let y = t.mean(v[0])?; let y = t.square(y); Ok(t.sum(y)) }, vec![a.clone()]);
        for axis in 0..2 {
            assert_passes("sum_axis", |t, v| { let y = t.sum_axis(v[0], axis)?; weighted_sum(t, y, seed) }, vec![a.clone()]);
            assert_passes("mean_axis", |t, v| { let y = t.mean_axis(v[0], axis)?; weighted_sum(t, y, seed) }, vec![a.clone()]);
        }
    }

    /// Using one tensor in two branches must match the finite difference of
    /// the same composite, i.e. the sum of both branch adjoints.
    #[test]
    fn fan_out_matches_duplicated_input(n in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n, 2]);
        let branches = |t: &mut Tape, a: Var, b: Var| -> Result<Var> {
            let left = t.tanh(a);
            let right = t.exp(b);
            let y = t.mul(left, right)?;
            weighted_sum(t, y, seed)
        };
        let shared = check_gradients(|t, v| branches(t, v[0], v[0]), &[x.clone()], STEP, TOL).unwrap();
        prop_assert!(shared.passed());
        let split = check_gradients(|t, v| branches(t, v[0], v[1]), &[x.clone(), x], STEP, TOL).unwrap();
        for e in 0..shared.analytic[0].len() {
            let summed = split.analytic[0][e] + split.analytic[1][e];
            prop_assert!((shared.analytic[0][e] - summed).abs() <= 1e-12 * summed.abs().max(1.0));
        }
    }
}

#[test]
fn composite_recurrent_cell() {
    // A gated update built from the same primitives the encoder uses.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, &[3, 4]);
    let h = random(&mut rng, &[3, 4]);
    let wz = random(&mut rng, &[4, 4]);
    let wn = random(&mut rng, &[4, 4]);
    assert_passes(
        "gated",
        |t, v| {
            let a = t.matmul(v[0], v[2])?;
            let z = t.sigmoid(a);
            let b = t.matmul(v[1], v[3])?;
            let n = t.tanh(b);
            let one_minus = t.scale(z, -1.0);
            let one_minus = t.add_scalar(one_minus, 1.0);
            let l = t.mul(one_minus, n)?;
            let r = t.mul(z, v[1])?;
            let y = t.add(l, r)?;
            weighted_sum(t, y, 3)
        },
        vec![x, h, wz, wn],
    );
}
