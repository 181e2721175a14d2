use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the causal transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub n_layers: usize,
    pub d_hidden: usize,
    pub n_q_heads: usize,
    pub n_kv_heads: usize,
    pub d_ffn: usize,
    /// Hard limit on tokens per forward pass.
    pub max_context: usize,
    /// Length the model is expected to handle well. Recorded alongside
    /// `max_context` but never enforced.
    pub effective_context: usize,
    pub vocab_size: usize,
    pub rope_base: f64,
    pub rms_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_hidden: 64,
            n_q_heads: 4,
            n_kv_heads: 2,
            d_ffn: 128,
            max_context: 2048,
            effective_context: 2048,
            vocab_size: 1024,
            rope_base: 10_000.0,
            rms_eps: 1e-6,
        }
    }
}

impl BackboneConfig {
    /// Published dimensions of the 0.6B backbone. Representable, not meant to
    /// be instantiated here.
    pub fn full_scale() -> Self {
        Self {
            n_layers: 28,
            d_hidden: 1024,
            n_q_heads: 16,
            n_kv_heads: 8,
            d_ffn: 3072,
            max_context: 131_072,
            effective_context: 8192,
            vocab_size: 151_936,
            rope_base: 1_000_000.0,
            rms_eps: 1e-6,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_hidden / self.n_q_heads
    }

    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_hidden", self.d_hidden),
            ("n_q_heads", self.n_q_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_ffn", self.d_ffn),
            ("max_context", self.max_context),
            ("effective_context", self.effective_context),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_hidden.is_multiple_of(self.n_q_heads) {
            return Err(Error::Config(format!(
                "d_hidden {} is not divisible by {} query heads",
                self.d_hidden, self.n_q_heads
            )));
        }
        if !self.n_q_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::Config(format!(
                "{} query heads cannot be grouped over {} key/value heads",
                self.n_q_heads, self.n_kv_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "head dimension {} must be even",
                self.head_dim()
            )));
        }
        if !(self.rope_base > 1.0) || !(self.rms_eps > 0.0) {
            return Err(Error::Config(
                "rope_base must exceed 1 and rms_eps must be positive".into(),
            ));
        }
        Ok(())
    }
}
