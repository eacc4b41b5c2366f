use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::grid::HeadGrid;
use crate::scalar::Scalar;

/// Parameters of one decoder block. Projections are stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: Array1<T>,
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_v: Array2<T>,
    pub w_o: Array2<T>,
    pub ffn_norm: Array1<T>,
    pub w_up: Array2<T>,
    pub w_down: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    /// `vocab x d_model`
    pub token_embedding: Array2<T>,
    /// `max_seq_len x d_model`, learned absolute positions.
    pub position_embedding: Array2<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Array1<T>,
    /// `vocab x d_model`
    pub unembedding: Array2<T>,
    /// Additive attention-logit bias on image-span keys, per head. Fixture
    /// only; `None` everywhere else.
    pub image_logit_bias: Option<HeadGrid<T>>,
}

/// Immutable transformer. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    weights: Weights<T>,
}

impl<T: Scalar> Model<T> {
    /// Assembles a model from explicit weights after checking shapes and
    /// finiteness.
    pub fn from_weights(config: ModelConfig, weights: Weights<T>) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let f = config.d_ff();
        let check = |name: &str, shape: &[usize], want: &[usize]| -> Result<()> {
            if shape == want {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} has shape {shape:?}, expected {want:?}")))
            }
        };
        check("token_embedding", weights.token_embedding.shape(), &[config.vocab_size, d])?;
        check("position_embedding", weights.position_embedding.shape(), &[config.max_seq_len, d])?;
        check("unembedding", weights.unembedding.shape(), &[config.vocab_size, d])?;
        check("final_norm", weights.final_norm.shape(), &[d])?;
        if weights.layers.len() != config.num_layers {
            return Err(Error::InvalidConfig(format!(
                "{} layers supplied for num_layers {}",
                weights.layers.len(),
                config.num_layers
            )));
        }
        for l in &weights.layers {
            check("attn_norm", l.attn_norm.shape(), &[d])?;
            check("ffn_norm", l.ffn_norm.shape(), &[d])?;
            for (name, m) in [("w_q", &l.w_q), ("w_k", &l.w_k), ("w_v", &l.w_v), ("w_o", &l.w_o)] {
                check(name, m.shape(), &[d, d])?;
            }
            check("w_up", l.w_up.shape(), &[f, d])?;
            check("w_down", l.w_down.shape(), &[d, f])?;
        }
        if let Some(bias) = &weights.image_logit_bias {
            bias.check_shape(config.num_layers, config.num_heads)?;
        }
        if !weights.all_finite() {
            return Err(Error::InvalidConfig("weights contain non-finite values".into()));
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }
}

impl<T: Scalar> Weights<T> {
    fn all_finite(&self) -> bool {
        let finite2 = |m: &Array2<T>| m.iter().all(|v| v.is_finite());
        let finite1 = |m: &Array1<T>| m.iter().all(|v| v.is_finite());
        finite2(&self.token_embedding)
            && finite2(&self.position_embedding)
            && finite2(&self.unembedding)
            && finite1(&self.final_norm)
            && self.layers.iter().all(|l| {
                finite1(&l.attn_norm)
                    && finite1(&l.ffn_norm)
                    && [&l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.w_up, &l.w_down]
                        .into_iter()
                        .all(finite2)
            })
            && self
                .image_logit_bias
                .as_ref()
                .is_none_or(|b| b.as_slice().iter().all(|v| v.is_finite()))
    }

    /// All-zero weights with unit norm gains.
    pub(crate) fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let f = config.d_ff();
        Self {
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.max_seq_len, d)),
            layers: (0..config.num_layers)
                .map(|_| LayerWeights {
                    attn_norm: Array1::ones(d),
                    w_q: Array2::zeros((d, d)),
                    w_k: Array2::zeros((d, d)),
                    w_v: Array2::zeros((d, d)),
                    w_o: Array2::zeros((d, d)),
                    ffn_norm: Array1::ones(d),
                    w_up: Array2::zeros((f, d)),
                    w_down: Array2::zeros((d, f)),
                })
                .collect(),
            final_norm: Array1::ones(d),
            unembedding: Array2::zeros((config.vocab_size, d)),
            image_logit_bias: None,
        }
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize, std: f64) -> Array2<T> {
        let normal = Normal::new(0.0, std).expect("std is positive");
        Array2::from_shape_fn((rows, cols), |_| T::of(normal.sample(&mut self.rng)))
    }
}

/// Seeded random initialization. Same config ⇒ bit-identical weights.
pub fn build_model<T: Scalar>(config: &ModelConfig) -> Result<Model<T>> {
    config.validate()?;
    let d = config.d_model;
    let f = config.d_ff();
    let s = config.init_scale;
    let proj = s / (d as f64).sqrt();
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
    };
    let token_embedding = init.matrix(config.vocab_size, d, s);
    let position_embedding = init.matrix(config.max_seq_len, d, 0.5 * s);
    let layers = (0..config.num_layers)
        .map(|_| LayerWeights {
            attn_norm: Array1::ones(d),
            w_q: init.matrix(d, d, proj),
            w_k: init.matrix(d, d, proj),
            w_v: init.matrix(d, d, proj),
            w_o: init.matrix(d, d, proj),
            ffn_norm: Array1::ones(d),
            w_up: init.matrix(f, d, proj),
            w_down: init.matrix(d, f, s / (f as f64).sqrt()),
        })
        .collect();
    let unembedding = init.matrix(config.vocab_size, d, proj);
    Model::from_weights(
        config.clone(),
        Weights {
            token_embedding,
            position_embedding,
            layers,
            final_norm: Array1::ones(d),
            unembedding,
            image_logit_bias: None,
        },
    )
}
