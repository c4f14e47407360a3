use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::DEFAULT_EPSILON;

/// Network shape and the configured (non-learned) temporal constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Maximum sequence length `n`.
    pub max_len: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub layers: usize,
    /// Item count including the padding id 0.
    pub vocab: usize,
    pub dropout: f64,
    pub negatives: usize,
    pub gamma: f64,
    pub epsilon: f64,
    /// Ablation switch for the temporal channel.
    pub temporal_channel: bool,
    /// Ablation switch for the positional channel.
    pub positional_channel: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_len: 50,
            hidden: 50,
            ffn_hidden: 100,
            layers: 2,
            vocab: 0,
            dropout: 0.2,
            negatives: 128,
            gamma: 0.8,
            epsilon: DEFAULT_EPSILON,
            temporal_channel: true,
            positional_channel: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.max_len == 0 {
            return fail("max_len must be >= 1".into());
        }
        if self.hidden == 0 {
            return fail("hidden must be >= 1".into());
        }
        if self.ffn_hidden < self.hidden {
            return fail(format!("ffn_hidden ({}) must be >= hidden ({})", self.ffn_hidden, self.hidden));
        }
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.vocab < 2 {
            return fail(format!("vocab must include padding and at least one item, got {}", self.vocab));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.negatives == 0 {
            return fail("negatives must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return fail(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        Ok(())
    }
}
