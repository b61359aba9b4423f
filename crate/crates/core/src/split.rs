//! Edge-level (transductive) and drug-level (inductive) splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Example;
use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransductiveSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles example indices and cuts them at `train`/`valid` fractions;
/// the remainder is the test set. Sizes are rounded, test takes the rest.
pub fn transductive_split(count: usize, ratios: (f64, f64, f64), seed: u64) -> Result<TransductiveSplit> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(CoreError::Split(format!("ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (tr * count as f64).round() as usize;
    let n_valid = ((va * count as f64).round() as usize).min(count - n_train.min(count));
    let n_train = n_train.min(count);
    let split = TransductiveSplit {
        train: order[..n_train].to_vec(),
        valid: order[n_train..n_train + n_valid].to_vec(),
        test: order[n_train + n_valid..].to_vec(),
    };
    for (name, part, ratio) in [("train", &split.train, tr), ("valid", &split.valid, va), ("test", &split.test, te)] {
        if ratio > 0.0 && part.is_empty() {
            return Err(CoreError::Split(format!("{name} split is empty for {count} examples at ratios {ratios:?}")));
        }
    }
    Ok(split)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InductiveSplit {
    pub train_drugs: BTreeSet<usize>,
    /// Examples with both drugs in the training set.
    pub train: Vec<usize>,
    /// Examples with neither drug in the training set.
    pub test: Vec<usize>,
    /// Examples with exactly one training drug, dropped.
    pub discarded: usize,
}

/// Drugs appearing in at least one example, sorted.
pub fn drugs_of(examples: &[Example]) -> Vec<usize> {
    let set: BTreeSet<usize> = examples.iter().flat_map(|e| [e.left, e.right]).collect();
    set.into_iter().collect()
}

/// Partitions the drugs that occur in `examples`: a `drug_ratio` fraction
/// (rounded) becomes the training drugs.
pub fn inductive_split(examples: &[Example], drug_ratio: f64, seed: u64) -> Result<InductiveSplit> {
    if !(drug_ratio > 0.0 && drug_ratio <= 1.0) {
        return Err(CoreError::Split(format!("drug ratio {drug_ratio} outside (0, 1]")));
    }
    let mut drugs = drugs_of(examples);
    drugs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (drug_ratio * drugs.len() as f64).round() as usize;
    if n_train == 0 || n_train >= drugs.len() {
        return Err(CoreError::Split(format!(
            "drug ratio {drug_ratio} leaves an empty side ({n_train} of {} drugs for training)",
            drugs.len()
        )));
    }
    let train_drugs: BTreeSet<usize> = drugs[..n_train].iter().copied().collect();
    let mut split = InductiveSplit {
        train_drugs,
        train: Vec::new(),
        test: Vec::new(),
        discarded: 0,
    };
    for (i, e) in examples.iter().enumerate() {
        match (split.train_drugs.contains(&e.left), split.train_drugs.contains(&e.right)) {
            (true, true) => split.train.push(i),
            (false, false) => split.test.push(i),
            _ => split.discarded += 1,
        }
    }
    Ok(split)
}

/// Keeps only training examples whose drugs both fall in a `fraction` of
/// the split's training drugs (the first ones after a seeded shuffle). The
/// test set is untouched, so results across fractions share one test set.
pub fn subsample_train_drugs(examples: &[Example], split: &InductiveSplit, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CoreError::Split(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut drugs: Vec<usize> = split.train_drugs.iter().copied().collect();
    drugs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let keep: BTreeSet<usize> = drugs[..((fraction * drugs.len() as f64).round() as usize).max(1)]
        .iter()
        .copied()
        .collect();
    Ok(split
        .train
        .iter()
        .copied()
        .filter(|&i| keep.contains(&examples[i].left) && keep.contains(&examples[i].right))
        .collect())
}
