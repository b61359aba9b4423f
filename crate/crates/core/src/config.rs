use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// What the uncertainty head reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyInput {
    /// The co-attention fused embeddings of both drugs.
    #[default]
    FinalEmbeddings,
    /// The unweighted mean over scales of each drug's embeddings.
    MultiScale,
}

/// Model and optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of stacked encoder blocks (K).
    pub blocks: usize,
    /// Message-passing rounds per block (T).
    pub iterations: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub lambda_unc: f64,
    pub lambda_kl: f64,
    pub seed: u64,
    /// `false` replaces the per-relation matrices by one shared matrix.
    pub relation_module: bool,
    pub uncertainty_input: UncertaintyInput,
    /// Normalize with running statistics during training and never update
    /// them.
    pub freeze_batch_norm: bool,
    pub batch_norm_momentum: f64,
    /// Reshuffle examples every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            blocks: 3,
            iterations: 2,
            hidden_dim: 32,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            epochs: 20,
            batch_size: 8,
            accumulation_steps: 4,
            lambda_unc: 0.1,
            lambda_kl: 0.01,
            seed: 0,
            relation_module: true,
            uncertainty_input: UncertaintyInput::FinalEmbeddings,
            freeze_batch_norm: false,
            batch_norm_momentum: 0.1,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("blocks", self.blocks),
            ("iterations", self.iterations),
            ("hidden_dim", self.hidden_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("accumulation_steps", self.accumulation_steps),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(CoreError::Config(format!("{name} must be at least 1")));
            }
        }
        let non_negative = [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("lambda_unc", self.lambda_unc),
            ("lambda_kl", self.lambda_kl),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CoreError::Config(format!("{name} must be finite and non-negative, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.batch_norm_momentum) {
            return Err(CoreError::Config(format!(
                "batch_norm_momentum must lie in [0, 1], got {}",
                self.batch_norm_momentum
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.blocks, c.iterations, c.hidden_dim), (3, 2, 32));
        assert_eq!(c.batch_size * c.accumulation_steps, 32);
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig {
            seed: 17,
            uncertainty_input: UncertaintyInput::MultiScale,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(TrainConfig::from_toml("blockz = 3").is_err());
        assert!(TrainConfig::from_toml("blocks = 0").is_err());
        assert!(TrainConfig::from_toml("lambda_kl = -1.0").is_err());
        assert_eq!(TrainConfig::from_toml("epochs = 3").unwrap().epochs, 3);
    }
}
