//! The training loop with gradient accumulation and a per-step cosine
//! schedule.

use mpnp_autodiff::Tape;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::PairDataset;
use crate::encoder::{mix, ForwardMode};
use crate::error::{CoreError, Result};
use crate::loss::{composite_loss, LossBreakdown};
use crate::model::{collect_predictions, Model, ModelConfig, PredictionOutput};
use crate::optim::{cosine_lr, AdamW};

/// Size-weighted means of the training-mode loss terms over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Learning rate of the epoch's last optimizer step.
    pub lr: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tpred\tunc\tkl\ttotal\tlr";

    pub fn to_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}",
            self.epoch, l.pred, l.unc, l.kl, l.total, self.lr
        )
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: AdamW,
    pub log: Vec<EpochLog>,
}

/// Scheduler length: one step per `accumulation_steps` batches, with a
/// trailing partial group counted as a step.
pub fn total_steps(examples: usize, config: &TrainConfig) -> usize {
    let batches = examples.div_ceil(config.batch_size);
    config.epochs * batches.div_ceil(config.accumulation_steps)
}

/// Noise key for one side (0 left, 1 right) of one example in one epoch.
pub fn noise_key(seed: u64, epoch: usize, example: usize, side: u64) -> u64 {
    mix(mix(seed, epoch as u64), (example as u64) << 1 | side)
}

/// Example order for an epoch.
pub fn epoch_order(indices: &[usize], config: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed ^ 0x5348_5546, epoch as u64));
        order.shuffle(&mut rng);
    }
    order
}

/// Trains a freshly initialized model on `train` (indices into `data`).
pub fn fit(data: &PairDataset, train: &[usize], config: &TrainConfig) -> Result<TrainOutcome> {
    let model = Model::new(ModelConfig::new(config, data.relations), config.seed)?;
    fit_model(model, data, train, config)
}

pub fn fit_model(mut model: Model, data: &PairDataset, train: &[usize], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(CoreError::Config("no training examples".into()));
    }
    let mut optimizer = AdamW::new(&model.params, config.weight_decay);
    let schedule = total_steps(train.len(), config);
    let mut log = Vec::with_capacity(config.epochs);
    let mut accumulated: Vec<Vec<f64>> = zero_grads(&model);
    let mut pending = 0usize;

    for epoch in 0..config.epochs {
        let order = epoch_order(train, config, epoch);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        let mut sums = LossBreakdown::default();
        for (bi, batch) in batches.iter().enumerate() {
            let keys: Vec<u64> = [0u64, 1]
                .iter()
                .flat_map(|&side| batch.iter().map(move |&e| noise_key(config.seed, epoch, e, side)))
                .collect();
            let mode = ForwardMode {
                noise_keys: Some(&keys),
                batch_statistics: !config.freeze_batch_norm,
            };
            let mut tape = Tape::new();
            let pairs = data.pair_batch(batch);
            let forward = model.forward(&mut tape, &pairs, mode, false)?;
            let labels = data.labels(batch);
            let loss = composite_loss(&mut tape, &forward, &labels, config.lambda_unc, config.lambda_kl)?;
            let values = loss.values(&tape);
            if !values.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch, batch: bi });
            }
            let w = batch.len() as f64;
            sums.pred += w * values.pred;
            sums.unc += w * values.unc;
            sums.kl += w * values.kl;
            sums.total += w * values.total;

            let grads = tape.backward(loss.total)?;
            for (slot, acc) in accumulated.iter_mut().enumerate() {
                if let Some(g) = grads.get(forward.vars[slot]) {
                    acc.iter_mut().zip(g).for_each(|(a, g)| *a += g);
                }
            }
            pending += 1;

            if pending == config.accumulation_steps || bi + 1 == batches.len() {
                let scale = 1.0 / pending as f64;
                accumulated.iter_mut().flatten().for_each(|g| *g *= scale);
                let lr = cosine_lr(optimizer.step as usize, schedule, config.learning_rate)?;
                optimizer.step(&mut model.params, &accumulated, lr)?;
                if let Some(stats) = forward.batch_stats() {
                    model.update_running_stats(stats, config.batch_norm_momentum);
                }
                accumulated.iter_mut().flatten().for_each(|g| *g = 0.0);
                pending = 0;
            }
        }
        let n = train.len() as f64;
        let entry = EpochLog {
            epoch,
            loss: LossBreakdown {
                pred: sums.pred / n,
                unc: sums.unc / n,
                kl: sums.kl / n,
                total: sums.total / n,
            },
            lr: optimizer.last_lr,
        };
        log::debug!("{}", entry.to_row());
        log.push(entry);
    }
    Ok(TrainOutcome { model, optimizer, log })
}

fn zero_grads(model: &Model) -> Vec<Vec<f64>> {
    model.params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect()
}

/// Deterministic predictions for `indices`, in order.
pub fn predict_examples(model: &Model, data: &PairDataset, indices: &[usize], batch_size: usize) -> Result<Vec<PredictionOutput>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &data.pair_batch(chunk), ForwardMode::eval(), false)?;
        out.extend(collect_predictions(&tape, &f));
    }
    Ok(out)
}

/// Size-weighted loss terms in deterministic mode.
pub fn evaluate_loss(model: &Model, data: &PairDataset, indices: &[usize], config: &TrainConfig) -> Result<LossBreakdown> {
    let mut sums = LossBreakdown::default();
    for chunk in indices.chunks(config.batch_size.max(1)) {
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &data.pair_batch(chunk), ForwardMode::eval(), false)?;
        let v = composite_loss(&mut tape, &f, &data.labels(chunk), config.lambda_unc, config.lambda_kl)?.values(&tape);
        let w = chunk.len() as f64;
        sums.pred += w * v.pred;
        sums.unc += w * v.unc;
        sums.kl += w * v.kl;
        sums.total += w * v.total;
    }
    let n = indices.len().max(1) as f64;
    Ok(LossBreakdown {
        pred: sums.pred / n,
        unc: sums.unc / n,
        kl: sums.kl / n,
        total: sums.total / n,
    })
}
