use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Embedding tables for categorical features, reconstructed in embedding space.
    #[default]
    Cardicat,
    /// Every discrete feature one-hot encoded with a softmax head.
    BaselineOnehot,
    /// Cardicat plus a masked conditional embedding vector fed to both networks.
    Conditional,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cardicat" => Ok(Mode::Cardicat),
            "baseline_onehot" | "baseline" => Ok(Mode::BaselineOnehot),
            "conditional" => Ok(Mode::Conditional),
            _ => Err(Error::Usage(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericHead {
    #[default]
    Tanh,
    Linear,
}

/// `k_j = min(max_dim, ceil(sqrt(c_j)))` unless overridden per feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingDimRule {
    pub max_dim: usize,
    pub overrides: BTreeMap<String, usize>,
}

impl Default for EmbeddingDimRule {
    fn default() -> Self {
        Self {
            max_dim: 16,
            overrides: BTreeMap::new(),
        }
    }
}

impl EmbeddingDimRule {
    pub fn dim(&self, feature: &str, cardinality: usize) -> usize {
        if let Some(&k) = self.overrides.get(feature) {
            return k;
        }
        ceil_sqrt(cardinality).min(self.max_dim).max(1)
    }
}

fn ceil_sqrt(c: usize) -> usize {
    let mut k = (c as f64).sqrt() as usize;
    while k * k < c {
        k += 1;
    }
    while k > 0 && (k - 1) * (k - 1) >= c {
        k -= 1;
    }
    k
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Weight of the KL term.
    pub kl_weight: f64,
    /// Weight of the embedding-variance regulariser.
    pub reg_weight: f64,
    /// Multiplier on the reconstruction term.
    pub loss_factor: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub embedding: EmbeddingDimRule,
    pub numeric_head: NumericHead,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Cardicat,
            kl_weight: 1.0,
            reg_weight: 1.0,
            loss_factor: 5.0,
            learning_rate: 0.0005,
            batch_size: 2000,
            epochs: 150,
            latent_dim: 15,
            hidden_dim: 128,
            embedding: EmbeddingDimRule::default(),
            numeric_head: NumericHead::Tanh,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("kl_weight", self.kl_weight),
            ("reg_weight", self.reg_weight),
            ("loss_factor", self.loss_factor),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Usage(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || !self.learning_rate.is_finite()
        {
            return Err(Error::Usage("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be at least 1".into()));
        }
        if self.latent_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Usage(
                "latent_dim and hidden_dim must be at least 1".into(),
            ));
        }
        if self.embedding.max_dim == 0 || self.embedding.overrides.values().any(|&k| k == 0) {
            return Err(Error::Usage(
                "embedding dimensions must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
