use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::market_data::NUM_INDICATORS;

/// Which adjacency feeds the diffusion mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    /// Each adjacency row divided by its sum.
    #[default]
    Normalized,
    /// Energy/entropy weights as generated.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_stocks: usize,
    /// Lookback window length.
    pub tau: usize,
    pub num_relations: usize,
    pub layers: usize,
    /// Number of transition matrices mixed per relation and layer.
    pub expansion_steps: usize,
    pub embed_dim: usize,
    /// Base of the retention mask, `D[i][j] = decay^(i-j)`.
    pub decay: f64,
    pub num_groups: usize,
    /// Negative slope of the leaky-rectifier activation.
    pub slope: f64,
    pub norm_eps: f64,
    pub adjacency: AdjacencyMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_stocks: 2,
            tau: 21,
            num_relations: NUM_INDICATORS,
            layers: 8,
            expansion_steps: 7,
            embed_dim: 256,
            decay: 1.27,
            num_groups: 1,
            slope: 0.01,
            norm_eps: 1e-5,
            adjacency: AdjacencyMode::Normalized,
        }
    }
}

impl ModelConfig {
    /// Layer count and expansion steps used for the NASDAQ market.
    pub fn nasdaq(num_stocks: usize) -> Self {
        Self {
            num_stocks,
            ..Self::default()
        }
    }

    pub fn nyse(num_stocks: usize) -> Self {
        Self {
            num_stocks,
            expansion_steps: 8,
            ..Self::default()
        }
    }

    pub fn sse(num_stocks: usize) -> Self {
        Self {
            num_stocks,
            layers: 5,
            expansion_steps: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("num_stocks", self.num_stocks),
            ("tau", self.tau),
            ("num_relations", self.num_relations),
            ("expansion_steps", self.expansion_steps),
            ("embed_dim", self.embed_dim),
            ("num_groups", self.num_groups),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.num_groups) {
            return Err(ModelError::Config(format!(
                "embed_dim {} is not divisible by num_groups {}",
                self.embed_dim, self.num_groups
            )));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(ModelError::Config(format!("decay must be positive, got {}", self.decay)));
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 || !self.slope.is_finite() {
            return Err(ModelError::Config("norm_eps must be positive and slope finite".into()));
        }
        Ok(())
    }
}
