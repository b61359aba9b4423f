//! A fixed-seed finite-difference sweep over every primitive, for use
//! outside the test harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_gradients, GradCheckReport};
use crate::tape::{BatchNormMode, Tape, Var};
use crate::tensor::Tensor;

pub const SUITE_STEP: f64 = 1e-5;
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: String,
    pub report: GradCheckReport,
}

/// Values in `±[0.1, 1.5)`, away from the kinks of prelu/clamp.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
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
    Tensor::new(shape.to_vec(), values).expect("shape matches")
}

fn positive_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.2..2.0)).collect()).expect("shape matches")
}

/// Contracts `y` with fixed random weights so every element gets a
/// distinct adjoint.
pub fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff5e7);
    let w = random_tensor(&mut rng, &shape);
    let w = t.constant(shape, w.values().to_vec())?;
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Runs every primitive case. Errors only on a malformed case; gradient
/// mismatches are reported through each case's report.
pub fn primitive_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = |rng: &mut ChaCha8Rng, s: &[usize]| random_tensor(rng, s);
    let (a34, b34, b45) = (r(&mut rng, &[3, 4]), r(&mut rng, &[3, 4]), r(&mut rng, &[4, 5]));
    let row4 = r(&mut rng, &[4]);
    let col3 = r(&mut rng, &[3]);
    let pos34 = positive_tensor(&mut rng, &[3, 4]);
    let v6 = r(&mut rng, &[6]);
    let a23 = r(&mut rng, &[2, 4]);
    let src52 = r(&mut rng, &[5, 2]);
    let x53 = r(&mut rng, &[5, 3]);
    let (gamma, beta) = (r(&mut rng, &[3]), r(&mut rng, &[3]));
    let w = seed;
    let unary = |f: fn(&mut Tape, Var) -> Var| -> CaseFn { Box::new(move |t, v| { let y = f(t, v[0]); weighted_sum(t, y, w) }) };
    let index = vec![0usize, 2, 2, 1, 0];
    let segments = vec![0usize, 0, 1, 1, 1, 2];

    let mut cases: Vec<(&str, CaseFn, Vec<Tensor>)> = vec![
        ("matmul", Box::new(move |t, v| { let y = t.matmul(v[0], v[1])?; weighted_sum(t, y, w) }), vec![a34.clone(), b45.clone()]),
        ("transpose", Box::new(move |t, v| { let y = t.transpose(v[0])?; weighted_sum(t, y, w) }), vec![a34.clone()]),
        ("add", Box::new(move |t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y, w) }), vec![a34.clone(), b34.clone()]),
        ("sub", Box::new(move |t, v| { let y = t.sub(v[0], v[1])?; weighted_sum(t, y, w) }), vec![a34.clone(), b34.clone()]),
        ("mul", Box::new(move |t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, w) }), vec![a34.clone(), b34.clone()]),
        ("add_row", Box::new(move |t, v| { let y = t.add_row(v[0], v[1])?; weighted_sum(t, y, w) }), vec![a34.clone(), row4.clone()]),
        ("mul_col", Box::new(move |t, v| { let y = t.mul_col(v[0], v[1])?; weighted_sum(t, y, w) }), vec![a34.clone(), col3]),
        ("scale", Box::new(move |t, v| { let y = t.scale(v[0], -1.7); weighted_sum(t, y, w) }), vec![a34.clone()]),
        ("add_scalar", Box::new(move |t, v| { let y = t.add_scalar(v[0], 0.3); weighted_sum(t, y, w) }), vec![a34.clone()]),
        ("neg", unary(Tape::neg), vec![a34.clone()]),
        ("sigmoid", unary(Tape::sigmoid), vec![a34.clone()]),
        ("tanh", unary(Tape::tanh), vec![a34.clone()]),
        ("exp", unary(Tape::exp), vec![a34.clone()]),
        ("log", unary(Tape::log), vec![pos34]),
        ("square", unary(Tape::square), vec![a34.clone()]),
        ("softplus", unary(Tape::softplus), vec![a34.clone()]),
        ("clamp", Box::new(move |t, v| { let y = t.clamp(v[0], -1.0, 1.0); weighted_sum(t, y, w) }), vec![a34.clone()]),
        ("prelu", Box::new(move |t, v| { let y = t.prelu(v[0], v[1])?; weighted_sum(t, y, w) }), vec![a34.clone(), Tensor::vector(vec![0.25])]),
        ("softmax(axis 0)", Box::new(move |t, v| { let y = t.softmax(v[0], 0)?; weighted_sum(t, y, w) }), vec![a34.clone()]),
        ("softmax(axis 1)", Box::new(move |t, v| { let y = t.softmax(v[0], 1)?; weighted_sum(t, y, w) }), vec![a34.clone()]),
        (
            "segment_softmax",
            Box::new(move |t, v| { let y = t.segment_softmax(v[0], &segments, 3)?; weighted_sum(t, y, w) }),
            vec![v6.clone()],
        ),
        (
            "batch_norm(train)",
            Box::new(move |t, v| { let (y, _) = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train)?; weighted_sum(t, y, w) }),
            vec![x53.clone(), gamma.clone(), beta.clone()],
        ),
        (
            "batch_norm(eval)",
            Box::new(move |t, v| {
                let mode = BatchNormMode::Eval { running_mean: &[0.1, -0.2, 0.3], running_var: &[0.5, 1.5, 2.0] };
                let (y, _) = t.batch_norm(v[0], v[1], v[2], mode)?;
                weighted_sum(t, y, w)
            }),
            vec![x53.clone(), gamma, beta],
        ),
        ("concat(rows)", Box::new(move |t, v| { let y = t.concat(&[v[0], v[1]], 0)?; weighted_sum(t, y, w) }), vec![a34.clone(), a23.clone()]),
        ("concat(cols)", Box::new(move |t, v| { let y = t.concat(&[v[0], v[1]], 1)?; weighted_sum(t, y, w) }), vec![a34.clone(), b34.clone()]),
        ("slice_cols", Box::new(move |t, v| { let y = t.slice_cols(v[0], 1, 3)?; weighted_sum(t, y, w) }), vec![a34.clone()]),
        ("reshape", Box::new(move |t, v| { let y = t.reshape(v[0], &[2, 6])?; weighted_sum(t, y, w) }), vec![a34.clone()]),
        {
            let index = index.clone();
            ("gather_rows", Box::new(move |t, v| { let y = t.gather_rows(v[0], &index)?; weighted_sum(t, y, w) }), vec![a34.clone()])
        },
        ("scatter_sum", Box::new(move |t, v| { let y = t.scatter_sum(v[0], &index, 3)?; weighted_sum(t, y, w) }), vec![src52]),
        ("sum", Box::new(|t, v| { let y = t.sum(v[0]); Ok(t.square(y)) }), vec![a34.clone()]),
        ("mean", Box::new(|t, v| { let y = t.mean(v[0])?; Ok(t.square(y)) }), vec![a34.clone()]),
        ("sum_axis(0)", Box::new(move |t, v| { let y = t.sum_axis(v[0], 0)?; weighted_sum(t, y, w) }), vec![a34.clone()]),
        ("sum_axis(1)", Box::new(move |t, v| { let y = t.sum_axis(v[0], 1)?; weighted_sum(t, y, w) }), vec![a34.clone()]),
        ("mean_axis(0)", Box::new(move |t, v| { let y = t.mean_axis(v[0], 0)?; weighted_sum(t, y, w) }), vec![a34.clone()]),
        ("mean_axis(1)", Box::new(move |t, v| { let y = t.mean_axis(v[0], 1)?; weighted_sum(t, y, w) }), vec![a34.clone()]),
        (
            "linear",
            Box::new(move |t, v| { let y = t.linear(v[0], v[1], Some(v[2]))?; weighted_sum(t, y, w) }),
            vec![a34.clone(), b45.clone(), r(&mut rng, &[5])],
        ),
        (
            "fan_out",
            Box::new(move |t, v| {
                let a = t.tanh(v[0]);
                let b = t.exp(v[0]);
                let y = t.mul(a, b)?;
                weighted_sum(t, y, w)
            }),
            vec![a34],
        ),
    ];
    cases
        .drain(..)
        .map(|(name, f, inputs)| {
            let report = check_gradients(f, &inputs, SUITE_STEP, SUITE_TOLERANCE)?;
            Ok(SuiteCase {
                name: name.to_string(),
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        for case in primitive_suite(11).unwrap() {
            assert!(case.report.passed(), "{}: {}", case.name, case.report.max_relative_error);
        }
    }
}
