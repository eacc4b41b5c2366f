use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Normalization applied before each sublayer and before the output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    RmsNorm,
    /// No normalization. Used by the grounded fixture so that head outputs
    /// combine linearly into the logits.
    Identity,
}

fn default_ffn_mult() -> usize {
    4
}

fn default_init_scale() -> f64 {
    1.0
}

fn default_norm_eps() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl ModelConfig {
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        d_model: usize,
        vocab_size: usize,
        max_seq_len: usize,
        rng_seed: u64,
    ) -> Self {
        Self {
            num_layers,
            num_heads,
            d_model,
            ffn_mult: default_ffn_mult(),
            vocab_size,
            max_seq_len,
            rng_seed,
            normalization: Normalization::default(),
            norm_eps: default_norm_eps(),
            init_scale: default_init_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("d_model", self.d_model),
            ("ffn_mult", self.ffn_mult),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return Err(Error::InvalidConfig("norm_eps must be positive".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::InvalidConfig("init_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn d_ff(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    pub fn total_heads(&self) -> usize {
        self.num_layers * self.num_heads
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("ModelConfig always serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::parse("model config", 0, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Short stable fingerprint embedded in mask, count and trace files.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
