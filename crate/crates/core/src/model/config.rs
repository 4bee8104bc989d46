use crate::dsp::{MAX_FRAMES, N_CHANNELS};
use crate::error::{Error, Result};

/// Encoder architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub input_dim: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Encoder of `n_layers` blocks with the conventional `4 * hidden_dim` FFN.
    pub fn new(n_layers: usize, hidden_dim: usize, n_heads: usize) -> Self {
        ModelConfig {
            n_layers,
            hidden_dim,
            n_heads,
            ffn_dim: 4 * hidden_dim,
            input_dim: N_CHANNELS,
            max_positions: MAX_FRAMES,
            dropout_rate: 0.1,
        }
    }

    /// 4 layers, 768 wide, 12 heads.
    pub fn base() -> Self {
        ModelConfig::new(4, 768, 12)
    }

    /// 8 layers, 1024 wide, 16 heads.
    pub fn large() -> Self {
        ModelConfig::new(8, 1024, 16)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_heads == 0 || self.hidden_dim % self.n_heads != 0 {
            return Err(Error::config(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if self.hidden_dim % 2 != 0 {
            return Err(Error::config("hidden_dim must be even for sinusoidal positions"));
        }
        if self.ffn_dim == 0 || self.input_dim == 0 || self.max_positions == 0 {
            return Err(Error::config("ffn_dim, input_dim and max_positions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Downstream head type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Mutually exclusive classes; softmax over the logits.
    Classify { n_classes: usize },
    /// Independent binary tags; sigmoid per logit.
    Tag { n_tags: usize },
}

impl TaskKind {
    pub fn n_outputs(self) -> usize {
        match self {
            TaskKind::Classify { n_classes } => n_classes,
            TaskKind::Tag { n_tags } => n_tags,
        }
    }
}

/// Exact learnable-scalar count of the encoder, reconstruction head and
/// (optionally) task head.
pub fn count_parameters(cfg: &ModelConfig, head: Option<TaskKind>) -> usize {
    let h = cfg.hidden_dim;
    let f = cfg.ffn_dim;
    let input = cfg.input_dim * h + h;
    let attention = 4 * (h * h + h);
    let norms = 2 * 2 * h;
    let ffn = (h * f + f) + (f * h + h);
    let per_layer = attention + norms + ffn;
    let reconstruction = (h * h + h) + 2 * h + (h * cfg.input_dim + cfg.input_dim);
    let task = head.map_or(0, |k| h * k.n_outputs() + k.n_outputs());
    input + cfg.n_layers * per_layer + reconstruction + task
}
