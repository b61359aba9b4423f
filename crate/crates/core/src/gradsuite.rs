//! Finite-difference check of the full training loss against every model
//! parameter.

use mpnp_autodiff::{relative_error, Tape};
use mpnp_chem::{molecule, MolecularGraph};

use crate::config::TrainConfig;
use crate::encoder::ForwardMode;
use crate::error::Result;
use crate::loss::composite_loss;
use crate::model::{Model, ModelConfig, PairBatch};

#[derive(Clone, Debug, PartialEq)]
pub struct LossGradCheck {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter name and element of the worst mismatch.
    pub worst: Option<(String, usize)>,
    pub failures: usize,
    pub tolerance: f64,
    /// First few failures: name, element, analytic, numeric.
    pub examples: Vec<(String, usize, f64, f64)>,
}

impl LossGradCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Small molecules (at most five heavy atoms) used by the default check.
/// The charged atom keeps every nonzero feature column from being constant
/// over the batch; batch norm cancels a constant column exactly, leaving a
/// true-zero gradient that finite differences only resolve to roundoff.
pub const PROBE_SMILES: [&str; 4] = ["CCO", "C1CC1N", "CC(=O)[O-]", "C=CC#N"];

/// Training-mode loss (batch statistics, fixed readout noise) on the given
/// pairs, checked element by element with central differences.
pub fn loss_gradcheck(
    model: &Model,
    pairs: &PairBatch<'_>,
    labels: &[f64],
    config: &TrainConfig,
    step: f64,
    tolerance: f64,
) -> Result<LossGradCheck> {
    let keys: Vec<u64> = (0..2 * pairs.len() as u64).map(|k| 0x9e37 + k).collect();
    let loss_at = |m: &Model, grads: bool| -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let mode = ForwardMode {
            noise_keys: Some(&keys),
            batch_statistics: true,
        };
        let f = m.forward(&mut tape, pairs, mode, false)?;
        let loss = composite_loss(&mut tape, &f, labels, config.lambda_unc, config.lambda_kl)?;
        let value = tape.value(loss.total).values()[0];
        if !grads {
            return Ok((value, None));
        }
        let g = tape.backward(loss.total)?;
        let per_param = m
            .params
            .tensors()
            .iter()
            .enumerate()
            .map(|(slot, t)| g.get_or_zeros(f.vars[slot], t.numel()))
            .collect();
        Ok((value, Some(per_param)))
    };

    let (_, analytic) = loss_at(model, true)?;
    let analytic = analytic.expect("requested gradients");
    let mut probe = model.clone();
    let mut report = LossGradCheck {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
        failures: 0,
        tolerance,
        examples: Vec::new(),
    };
    for slot in 0..model.params.len() {
        for e in 0..model.params.get(slot).numel() {
            let original = model.params.get(slot).values()[e];
            probe.params.get_mut(slot).values_mut()[e] = original + step;
            let (plus, _) = loss_at(&probe, false)?;
            probe.params.get_mut(slot).values_mut()[e] = original - step;
            let (minus, _) = loss_at(&probe, false)?;
            probe.params.get_mut(slot).values_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[slot][e], numeric);
            report.checked += 1;
            if err > tolerance {
                report.failures += 1;
                if report.examples.len() < 16 {
                    report.examples.push((model.params.name(slot).to_string(), e, analytic[slot][e], numeric));
                }
            }
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((model.params.name(slot).to_string(), e));
            }
        }
    }
    Ok(report)
}

/// The default check: two pairs of small molecules under `config`'s
/// architecture with two relation types.
pub fn default_loss_gradcheck(config: &TrainConfig, step: f64, tolerance: f64) -> Result<LossGradCheck> {
    let graphs: Vec<MolecularGraph> = PROBE_SMILES
        .iter()
        .map(|s| molecule(s).expect("probe molecules parse"))
        .collect();
    let model = Model::new(ModelConfig::new(config, 2), config.seed)?;
    let pairs = PairBatch {
        left: vec![&graphs[0], &graphs[1]],
        right: vec![&graphs[2], &graphs[3]],
        relations: vec![0, 1],
    };
    loss_gradcheck(&model, &pairs, &[1.0, 0.0], config, step, tolerance)
}
