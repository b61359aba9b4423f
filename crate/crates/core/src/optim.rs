//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{CoreError, Result};
use crate::params::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates and step count for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub weight_decay: f64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    /// Learning rate used by the most recent step.
    pub last_lr: f64,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        AdamW {
            weight_decay,
            second: zeros.clone(),
            first: zeros,
            step: 0,
            last_lr: 0.0,
        }
    }

    /// One update. `grads[i]` belongs to parameter slot `i`. Every gradient
    /// is checked before any parameter changes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(CoreError::Config(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.first.len(),
                params.len()
            )));
        }
        for (slot, g) in grads.iter().enumerate() {
            if g.len() != params.get(slot).numel() {
                return Err(CoreError::ParamShape {
                    name: params.name(slot).to_string(),
                    expected: params.get(slot).shape().to_vec(),
                    found: vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFiniteGradient(params.name(slot).to_string()));
            }
        }
        self.step += 1;
        self.last_lr = lr;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        for (slot, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            let theta = params.get_mut(slot).values_mut();
            for i in 0..g.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
                theta[i] = theta[i] * decay - lr * update;
            }
        }
        Ok(())
    }
}

/// `base·½(1 + cos(π·step/total))`; no restarts.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(CoreError::Config("cosine schedule needs at least one step".into()));
    }
    if step > total_steps {
        return Err(CoreError::Config(format!("step {step} beyond schedule length {total_steps}")));
    }
    Ok(base_lr * 0.5 * (1.0 + (PI * step as f64 / total_steps as f64).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mpnp_autodiff::Tensor;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(values));
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = store(vec![1.0, -2.0]);
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &[vec![0.0, 0.0]], 0.1).unwrap();
        assert_eq!(p.get(0).values(), &[1.0, -2.0]);
    }

    #[test]
    fn decay_alone_shrinks() {
        let mut p = store(vec![1.0, -2.0]);
        let mut opt = AdamW::new(&p, 0.1);
        opt.step(&mut p, &[vec![0.0, 0.0]], 1.0).unwrap();
        assert_eq!(p.get(0).values(), &[0.9, -1.8]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g| + ε).
        for g in [3.0, -0.02] {
            let mut p = store(vec![0.5]);
            let mut opt = AdamW::new(&p, 0.0);
            opt.step(&mut p, &[vec![g]], 1e-3).unwrap();
            let expected = 0.5 - 1e-3 * g / (g.abs() + EPSILON);
            assert!((p.get(0).values()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = store(vec![0.5]);
        let mut opt = AdamW::new(&p, 0.0);
        match opt.step(&mut p, &[vec![f64::NAN]], 1e-3) {
            Err(CoreError::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.get(0).values(), &[0.5]);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 1e-3).unwrap(), 1e-3);
        assert!(cosine_lr(10, 10, 1e-3).unwrap().abs() < 1e-18);
        assert!((cosine_lr(5, 10, 1e-3).unwrap() - 5e-4).abs() < 1e-18);
        assert!(cosine_lr(0, 0, 1e-3).is_err());
        assert!(cosine_lr(11, 10, 1e-3).is_err());
    }
}
