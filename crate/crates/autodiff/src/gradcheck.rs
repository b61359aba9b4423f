//! Central finite-difference verification of analytic gradients.

use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckFailure {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Per input, per element relative error.
    pub relative_errors: Vec<Vec<f64>>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn checked_elements(&self) -> usize {
        self.relative_errors.iter().map(Vec::len).sum()
    }
}

fn ensure_finite(input: usize, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(element) => Err(AutodiffError::NonFinite {
            input,
            element,
            value: values[element],
        }),
        None => Ok(()),
    }
}

/// Compares the tape gradient of a scalar function against the central
/// difference `(f(x+h) − f(x−h)) / 2h` for every element of every input.
///
/// `f` receives one [`Var`] per input, in order, and must return a scalar.
/// Inputs are perturbed one element at a time on fresh tapes, so `f` has to
/// be deterministic.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(AutodiffError::BadStep(step));
    }
    for (i, t) in inputs.iter().enumerate() {
        ensure_finite(i, t.values())?;
    }

    let eval = |values: &[Tensor], with_grad: bool| -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| tape.leaf(&t.clone().with_requires_grad(with_grad)))
            .collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out);
        if value.numel() != 1 {
            return Err(AutodiffError::NonScalarRoot {
                shape: value.shape().to_vec(),
            });
        }
        let y = value.item();
        if !with_grad {
            return Ok((y, None));
        }
        let grads = tape.backward(out)?;
        let per_input = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| grads.get_or_zeros(v, t.numel()))
            .collect();
        Ok((y, Some(per_input)))
    };

    let (y0, analytic) = eval(inputs, true)?;
    if !y0.is_finite() {
        return Err(AutodiffError::NonFinite {
            input: usize::MAX,
            element: 0,
            value: y0,
        });
    }
    let analytic = analytic.unwrap_or_default();
    for (i, a) in analytic.iter().enumerate() {
        ensure_finite(i, a)?;
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut failures = Vec::new();
    let mut max_relative_error: f64 = 0.0;
    for i in 0..inputs.len() {
        let mut num_i = Vec::with_capacity(inputs[i].numel());
        let mut rel_i = Vec::with_capacity(inputs[i].numel());
        for e in 0..inputs[i].numel() {
            let original = inputs[i].values()[e];
            work[i].values_mut()[e] = original + step;
            let (plus, _) = eval(&work, false)?;
            work[i].values_mut()[e] = original - step;
            let (minus, _) = eval(&work, false)?;
            work[i].values_mut()[e] = original;
            let n = (plus - minus) / (2.0 * step);
            if !n.is_finite() {
                return Err(AutodiffError::NonFinite {
                    input: i,
                    element: e,
                    value: n,
                });
            }
            let a = analytic[i][e];
            let rel = relative_error(a, n);
            max_relative_error = max_relative_error.max(rel);
            if rel > tolerance {
                failures.push(GradCheckFailure {
                    input: i,
                    element: e,
                    analytic: a,
                    numeric: n,
                    relative_error: rel,
                });
            }
            num_i.push(n);
            rel_i.push(rel);
        }
        numeric.push(num_i);
        relative_errors.push(rel_i);
    }

    Ok(GradCheckReport {
        relative_errors,
        analytic,
        numeric,
        max_relative_error,
        tolerance,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let report = check_gradients(
            |t, v| {
                let s = t.square(v[0]);
                Ok(t.sum(s))
            },
            &[x],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.analytic[0], vec![2.0, 4.0, 6.0]);
        assert!(report.max_relative_error < 1e-6, "{}", report.max_relative_error);
        assert!(report.passed());
    }

    #[test]
    fn plain_sum_has_unit_gradient() {
        let x = Tensor::vector(vec![-3.0, 0.5, 7.0, 1e3]);
        let report = check_gradients(|t, v| Ok(t.sum(v[0])), &[x], 1e-5, 1e-6).unwrap();
        assert_eq!(report.analytic[0], vec![1.0; 4]);
    }

    #[test]
    fn non_finite_input_is_located() {
        let x = Tensor::vector(vec![1.0, f64::NAN]);
        let err = check_gradients(|t, v| Ok(t.sum(v[0])), &[x], 1e-5, 1e-6).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { input: 0, element: 1, .. }));
    }

    #[test]
    fn non_finite_output_is_located() {
        // log(x) at x = 1e-300 is fine, but log of the lower probe is -inf / NaN.
        let x = Tensor::vector(vec![1.0, 0.0]);
        let err = check_gradients(
            |t, v| {
                let l = t.log(v[0]);
                Ok(t.sum(l))
            },
            &[x],
            1e-5,
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { .. }));
    }

    #[test]
    fn step_must_be_positive() {
        let x = Tensor::vector(vec![1.0]);
        assert!(check_gradients(|t, v| Ok(t.sum(v[0])), &[x.clone()], 0.0, 1e-6).is_err());
        assert!(check_gradients(|t, v| Ok(t.sum(v[0])), &[x], -1e-3, 1e-6).is_err());
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        // clamp has zero adjoint outside the box; probing right at the edge
        // from both sides gives a one-sided slope of 1/2.
        let x = Tensor::vector(vec![1.0]);
        let report = check_gradients(
            |t, v| {
                let c = t.clamp(v[0], -1.0, 1.0);
                Ok(t.sum(c))
            },
            &[x],
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures[0].element, 0);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
