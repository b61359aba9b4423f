//! The run configuration: a flat TOML file holding every training
//! hyperparameter plus paths and split options.

use std::path::{Path, PathBuf};

use mpnp_core::TrainConfig;
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Transductive,
    Inductive,
}

/// Keys that belong to the run rather than to training.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunKeys {
    drugs: PathBuf,
    pairs: PathBuf,
    #[serde(default = "default_checkpoint")]
    checkpoint: PathBuf,
    #[serde(default = "default_loss_log")]
    loss_log: PathBuf,
    #[serde(default)]
    split: SplitMode,
    #[serde(default = "default_ratios")]
    ratios: [f64; 3],
    #[serde(default = "default_drug_ratio")]
    drug_ratio: f64,
    split_seed: Option<u64>,
}

const RUN_KEYS: [&str; 8] = [
    "drugs",
    "pairs",
    "checkpoint",
    "loss_log",
    "split",
    "ratios",
    "drug_ratio",
    "split_seed",
];

fn default_checkpoint() -> PathBuf {
    "model.ckpt".into()
}

fn default_loss_log() -> PathBuf {
    "loss.tsv".into()
}

fn default_ratios() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_drug_ratio() -> f64 {
    0.7
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub drugs: PathBuf,
    pub pairs: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub split: SplitMode,
    /// Train, valid and test fractions for the transductive split.
    pub ratios: (f64, f64, f64),
    /// Fraction of drugs held for training in the inductive split.
    pub drug_ratio: f64,
    /// Falls back to the training seed when unset.
    split_seed: Option<u64>,
}

impl RunConfig {
    /// Parses `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        let mut run = toml::Table::new();
        for key in RUN_KEYS {
            if let Some(v) = table.remove(key) {
                run.insert(key.to_string(), v);
            }
        }
        let keys: RunKeys = run.try_into().map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        let train: TrainConfig = table.try_into().map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        train.validate()?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        Ok(RunConfig {
            train,
            drugs: resolve(keys.drugs),
            pairs: resolve(keys.pairs),
            checkpoint: resolve(keys.checkpoint),
            loss_log: resolve(keys.loss_log),
            split: keys.split,
            ratios: (keys.ratios[0], keys.ratios[1], keys.ratios[2]),
            drug_ratio: keys.drug_ratio,
            split_seed: keys.split_seed,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.train.seed)
    }

    /// Checks input files exist and output directories are present.
    pub fn validate_paths(&self, outputs: &[&Path]) -> Result<()> {
        for input in [&self.drugs, &self.pairs] {
            if !input.is_file() {
                return Err(CliError::Invalid(format!("{}: no such file", input.display())));
            }
        }
        for output in outputs {
            check_output(output)?;
        }
        Ok(())
    }
}

pub fn check_output(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(CliError::Invalid(format!("{}: directory does not exist", parent.display())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixes_run_and_training_keys() {
        let c = RunConfig::parse(
            "drugs = \"d.tsv\"\npairs = \"/abs/p.tsv\"\nhidden_dim = 8\nsplit = \"inductive\"\nseed = 4\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(c.drugs, Path::new("/base/d.tsv"));
        assert_eq!(c.pairs, Path::new("/abs/p.tsv"));
        assert_eq!(c.train.hidden_dim, 8);
        assert_eq!(c.split, SplitMode::Inductive);
        assert_eq!(c.split_seed(), 4);
        assert_eq!(c.checkpoint, Path::new("/base/model.ckpt"));
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = RunConfig::parse("drugs = \"d\"\npairs = \"p\"\nhiden_dim = 8\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("hiden_dim"), "{err}");
        assert_eq!(err.exit_code(), 1);
        assert!(RunConfig::parse("pairs = \"p\"\n", Path::new(".")).is_err());
    }
}
