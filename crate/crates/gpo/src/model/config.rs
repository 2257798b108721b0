use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Result};

/// Which attention layout the transformer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Context tokens attend to each other; each target sees the context and itself.
    #[default]
    Gpo,
    /// Lower-triangular mask plus sinusoidal positions, for ablation runs.
    CausalAblation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of an ingested viewpoint embedding.
    pub d_embed: usize,
    #[serde(default = "defaults::d_model")]
    pub d_model: usize,
    #[serde(default = "defaults::n_layers")]
    pub n_layers: usize,
    #[serde(default = "defaults::n_heads")]
    pub n_heads: usize,
    #[serde(default = "defaults::d_ff")]
    pub d_ff: usize,
    /// Number of linear layers mapping `[x ‖ y]` to `d_model`.
    #[serde(default = "defaults::input_projector_depth")]
    pub input_projector_depth: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Start the scalar output head at zero so an untrained model predicts
    /// uniform distributions.
    #[serde(default = "defaults::zero_output_head")]
    pub zero_output_head: bool,
}

mod defaults {
    pub fn d_model() -> usize {
        64
    }
    pub fn n_layers() -> usize {
        6
    }
    pub fn n_heads() -> usize {
        4
    }
    pub fn d_ff() -> usize {
        128
    }
    pub fn input_projector_depth() -> usize {
        4
    }
    pub fn zero_output_head() -> bool {
        true
    }
}

impl ModelConfig {
    pub fn new(d_embed: usize) -> Self {
        ModelConfig {
            d_embed,
            d_model: defaults::d_model(),
            n_layers: defaults::n_layers(),
            n_heads: defaults::n_heads(),
            d_ff: defaults::d_ff(),
            input_projector_depth: defaults::input_projector_depth(),
            seed: 0,
            mode: Mode::Gpo,
            zero_output_head: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_embed", self.d_embed),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("input_projector_depth", self.input_projector_depth),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return validation_err(format!("model config: {name} must be at least 1"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return validation_err(format!(
                "model config: d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        Ok(())
    }

    /// Width of a packed token, `d_embed + 1`.
    pub fn token_width(&self) -> usize {
        self.d_embed + 1
    }
}
