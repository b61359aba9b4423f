use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Example;
use crate::error::{CoreError, Result};

/// Attempts per negative before it is skipped.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Negatives {
    pub examples: Vec<Example>,
    /// Negatives abandoned after [`MAX_ATTEMPTS`] collisions.
    pub skipped: usize,
}

/// Corrupts one side of each positive with a random drug from `universe`.
/// `ratio` negatives are drawn per positive (fractional parts are drawn
/// with that probability). The result never contains a known positive
/// triple.
pub fn sample_negatives(positives: &[Example], universe: &[usize], ratio: f64, seed: u64) -> Result<Negatives> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(CoreError::Sampling(format!("ratio {ratio} must be positive")));
    }
    if universe.len() < 2 {
        return Err(CoreError::Sampling(format!(
            "a universe of {} drugs cannot produce corrupted pairs",
            universe.len()
        )));
    }
    let known: BTreeSet<(usize, usize, usize)> = positives.iter().map(|e| (e.left, e.right, e.relation)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Negatives {
        examples: Vec::new(),
        skipped: 0,
    };
    let whole = ratio.floor() as usize;
    let frac = ratio - whole as f64;
    for p in positives {
        let draws = whole + usize::from(frac > 0.0 && rng.random_bool(frac));
        for _ in 0..draws {
            let corrupt_left = rng.random_bool(0.5);
            let mut found = None;
            for _ in 0..MAX_ATTEMPTS {
                let d = universe[rng.random_range(0..universe.len())];
                let (l, r) = if corrupt_left { (d, p.right) } else { (p.left, d) };
                if l != r && !known.contains(&(l, r, p.relation)) {
                    found = Some((l, r));
                    break;
                }
            }
            match found {
                Some((left, right)) => out.examples.push(Example {
                    left,
                    right,
                    relation: p.relation,
                    label: 0.0,
                }),
                None => {
                    log::warn!("no negative found for ({}, {}, {})", p.left, p.right, p.relation);
                    out.skipped += 1;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ratio_matches_positive_count() {
        let positives: Vec<Example> = (0..20)
            .map(|i| Example {
                left: i,
                right: (i + 1) % 20,
                relation: i % 3,
                label: 1.0,
            })
            .collect();
        let universe: Vec<usize> = (0..20).collect();
        let n = sample_negatives(&positives, &universe, 1.0, 5).unwrap();
        assert_eq!(n.examples.len() + n.skipped, 20);
        assert_eq!(n, sample_negatives(&positives, &universe, 1.0, 5).unwrap());
        let known: BTreeSet<_> = positives.iter().map(|e| (e.left, e.right, e.relation)).collect();
        assert!(n.examples.iter().all(|e| !known.contains(&(e.left, e.right, e.relation)) && e.label == 0.0));
    }

    #[test]
    fn tiny_universe_is_an_error() {
        assert!(sample_negatives(&[], &[1], 1.0, 0).is_err());
        assert!(sample_negatives(&[], &[1, 2], 0.0, 0).is_err());
    }
}
