//! Run configuration and model files.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use maskcd::model::{GroundingOptions, LanguagePrior};
use maskcd::seed::derive_seed;
use maskcd::synthdata::{
    corpus_stats, generate_scenes, Lexicon, PopeSplit, PromptTemplate, SceneParams,
};
use maskcd::{build_grounded_model, build_model, HeadId, Model32, ModelConfig};
use serde::{Deserialize, Serialize};

fn default_objects() -> usize {
    12
}
fn default_questions() -> usize {
    2
}
fn default_gen_len() -> usize {
    12
}
fn default_profile_scenes() -> usize {
    20
}
fn default_profile_tokens() -> usize {
    20
}
fn default_workers() -> usize {
    1
}
fn default_random_seeds() -> usize {
    5
}

/// Everything a reproducible run needs. Relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model file: a model config, optionally with a `[grounding]` table.
    pub model_config: PathBuf,
    /// Root seed; every component derives its own seed from it.
    pub seed: u64,
    pub tau: f64,
    pub alpha: f64,
    /// Evaluation corpus size.
    pub scenes: usize,
    #[serde(default = "default_objects")]
    pub objects: usize,
    #[serde(default = "default_questions")]
    pub questions_per_scene: usize,
    pub split: PopeSplit,
    /// Caption length limit.
    #[serde(default = "default_gen_len")]
    pub gen_len: usize,
    #[serde(default = "default_profile_scenes")]
    pub profile_scenes: usize,
    /// Tokens generated per profiling prompt.
    #[serde(default = "default_profile_tokens")]
    pub profile_tokens: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Number of random-mask draws in `run`.
    #[serde(default = "default_random_seeds")]
    pub random_masks: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).context("parsing run config")?;
        if cfg.model_config.is_relative() {
            cfg.model_config = base.join(&cfg.model_config);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading run config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.tau > 0.0 && self.tau < 1.0,
            "tau must lie strictly inside (0, 1), got {}",
            self.tau
        );
        ensure!(self.alpha.is_finite() && self.alpha >= 0.0, "alpha must be >= 0, got {}", self.alpha);
        ensure!(self.scenes >= 1, "scenes must be >= 1");
        ensure!(self.profile_scenes >= 1, "profile_scenes must be >= 1");
        ensure!(self.gen_len >= 1 && self.profile_tokens >= 1, "generation lengths must be >= 1");
        ensure!(self.workers >= 1, "workers must be >= 1");
        ensure!(
            self.model_config.is_file(),
            "model config {} does not exist",
            self.model_config.display()
        );
        Ok(())
    }

    pub fn component_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }
}

/// Which prior the grounded model carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    None,
    Contaminated,
}

fn default_prior_scenes() -> usize {
    500
}

/// `[grounding]` table of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingSpec {
    /// `[layer, head]` pairs.
    pub heads: Vec<[usize; 2]>,
    #[serde(default)]
    pub prior: PriorKind,
    /// Corpus the prior statistics are measured on.
    #[serde(default = "default_prior_scenes")]
    pub prior_scenes: usize,
    #[serde(default)]
    pub prior_seed: u64,
    #[serde(default)]
    pub weak_fraction: Option<f64>,
}

impl GroundingSpec {
    pub fn head_ids(&self) -> Vec<HeadId> {
        self.heads.iter().map(|[l, h]| HeadId::new(*l, *h)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingSpec>,
}

impl ModelFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).context("parsing model file")?;
        file.config.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading model file {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model file serializes")
    }

    /// Fingerprint of the weights: first 8 bytes of SHA-256 over the
    /// canonical form of the file, in hex.
    pub fn hash(&self) -> String {
        format!("{:016x}", derive_seed(0, &self.to_toml_string()))
    }

    pub fn build(&self, lexicon: &Lexicon, template: &PromptTemplate) -> Result<Model32> {
        let Some(g) = &self.grounding else {
            return Ok(build_model(&self.config)?);
        };
        let mut options = GroundingOptions::default();
        if let Some(w) = g.weak_fraction {
            options.weak_fraction = w;
        }
        if g.prior == PriorKind::Contaminated {
            if g.prior_scenes == 0 {
                bail!("prior_scenes must be >= 1");
            }
            let scenes = generate_scenes(lexicon, &SceneParams::default(), g.prior_scenes, g.prior_seed)?;
            options.prior = Some(LanguagePrior::contaminated(&corpus_stats(&scenes, lexicon)));
        }
        Ok(build_grounded_model(&self.config, lexicon, template, &g.head_ids(), &options)?)
    }
}
