//! GPT-2 style decoder: pre-norm blocks, learned absolute positions, GELU
//! MLP, untied output head without bias. All arithmetic is `f64`; stored
//! checkpoints hold `f32`-representable values.

mod checkpoint;
mod kernels;
mod layout;
mod scoring;
mod train;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use checkpoint::{init_model, Checkpoint, Provenance};
pub use layout::{Layout, TensorSpec};
pub use scoring::{completion_log_probs, init_nonce_embeddings, score_completion, NoiseScale};
pub use train::{
    cosine_lr, perplexity, train, train_with_history, AdamW, TrainConfig, TrainOutcome,
};
pub use transformer::{forward, loss, loss_and_grads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub context_length: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_mlp_ratio() -> usize {
    4
}

impl ModelConfig {
    pub fn new(
        num_layers: usize,
        model_dim: usize,
        num_heads: usize,
        vocab_size: usize,
        context_length: usize,
    ) -> Self {
        ModelConfig {
            num_layers,
            model_dim,
            num_heads,
            vocab_size,
            context_length,
            mlp_ratio: default_mlp_ratio(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.model_dim == 0 || self.num_heads == 0 {
            return Err(invalid("layers, model_dim and num_heads must be positive"));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(invalid(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.context_length < 2 {
            return Err(invalid("context_length must be at least 2"));
        }
        if self.vocab_size == 0 || self.mlp_ratio == 0 {
            return Err(invalid("vocab_size and mlp_ratio must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.model_dim * self.mlp_ratio
    }
}

/// Exact trainable parameter count.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let c = cfg.model_dim;
    let h = cfg.hidden_dim();
    let per_layer = (c * 3 * c + 3 * c) // qkv
        + (c * c + c) // attention output
        + (c * h + h) // mlp up
        + (h * c + c) // mlp down
        + 4 * c; // two layer norms
    cfg.vocab_size * c // token embedding
        + cfg.context_length * c // positions
        + cfg.num_layers * per_layer
        + 2 * c // final norm
        + cfg.vocab_size * c // output head
}

/// Named size presets from the reference grid.
pub fn size_preset(name: &str, vocab_size: usize, context_length: usize) -> Option<ModelConfig> {
    let (l, d, h) = match name {
        "small" => (4, 128, 4),
        "medium" => (6, 256, 8),
        "large" => (8, 512, 8),
        "desk" => (2, 64, 2),
        _ => return None,
    };
    Some(ModelConfig::new(l, d, h, vocab_size, context_length))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_grid_parameter_counts() {
        assert_eq!(param_count(&ModelConfig::new(4, 128, 4, 8020, 128)), 2_862_848);
        assert_eq!(param_count(&ModelConfig::new(6, 256, 8, 8020, 128)), 8_878_080);
        assert_eq!(param_count(&ModelConfig::new(8, 512, 8, 8020, 128)), 33_498_112);
    }

    #[test]
    fn tied_embeddings_would_not_match() {
        let cfg = ModelConfig::new(4, 128, 4, 8020, 128);
        assert_eq!(param_count(&cfg) - cfg.vocab_size * cfg.model_dim, 1_836_288);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(2, 64, 3, 100, 16).validate().is_err());
        assert!(ModelConfig::new(2, 64, 2, 100, 1).validate().is_err());
        assert!(ModelConfig::new(2, 64, 2, 100, 16).validate().is_ok());
        assert_eq!(size_preset("small", 8020, 128).unwrap(), ModelConfig::new(4, 128, 4, 8020, 128));
        assert!(size_preset("huge", 1, 2).is_none());
    }
}
