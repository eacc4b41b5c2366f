//! Shared helpers for integration tests: a naive reference forward pass and
//! random model/prompt generators.

#![allow(dead_code)]

use std::ops::Range;

use maskcd::model::{LayerWeights, Weights};
use maskcd::{
    build_model, HeadId, Model, ModelConfig, MultimodalSequence, Normalization, Role, Scalar,
    TokenId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line f64 transformer over the full sequence, no caching.
///
/// Masked heads are removed by zeroing their rows of `w_v`, so their
/// attention output is zero by construction rather than by skipping.
pub struct Reference {
    cfg: ModelConfig,
    w: Weights<f64>,
}

pub struct RefOutput {
    pub logits: Vec<f64>,
    /// `rows[layer][head]` for the last position.
    pub rows: Vec<Vec<Vec<f64>>>,
}

fn to_f64<T: Scalar>(w: &Weights<T>) -> Weights<f64> {
    let c2 = |m: &ndarray::Array2<T>| m.mapv(|v| v.to_f64_lossy());
    let c1 = |m: &ndarray::Array1<T>| m.mapv(|v| v.to_f64_lossy());
    Weights {
        token_embedding: c2(&w.token_embedding),
        position_embedding: c2(&w.position_embedding),
        layers: w
            .layers
            .iter()
            .map(|l| LayerWeights {
                attn_norm: c1(&l.attn_norm),
                w_q: c2(&l.w_q),
                w_k: c2(&l.w_k),
                w_v: c2(&l.w_v),
                w_o: c2(&l.w_o),
                ffn_norm: c1(&l.ffn_norm),
                w_up: c2(&l.w_up),
                w_down: c2(&l.w_down),
            })
            .collect(),
        final_norm: c1(&w.final_norm),
        unembedding: c2(&w.unembedding),
        image_logit_bias: w
            .image_logit_bias
            .as_ref()
            .map(|b| b.map(|v| v.to_f64_lossy())),
    }
}

impl Reference {
    pub fn new<T: Scalar>(model: &Model<T>, masked: &[HeadId]) -> Self {
        let cfg = model.config().clone();
        let mut w = to_f64(model.weights());
        let dh = cfg.d_head();
        for h in masked {
            let rows = h.head * dh..(h.head + 1) * dh;
            for r in rows {
                w.layers[h.layer].w_v.row_mut(r).fill(0.0);
            }
        }
        Self { cfg, w }
    }

    fn norm(&self, x: &[f64], gain: &[f64]) -> Vec<f64> {
        match self.cfg.normalization {
            Normalization::Identity => x.to_vec(),
            Normalization::RmsNorm => {
                let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
                let inv = 1.0 / (ms + self.cfg.norm_eps).sqrt();
                x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
            }
        }
    }

    fn matvec(m: &ndarray::Array2<f64>, x: &[f64]) -> Vec<f64> {
        (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[[r, c]] * x[c]).sum())
            .collect()
    }

    pub fn forward(&self, tokens: &[TokenId], image_span: Range<usize>) -> RefOutput {
        let (d, dh, heads) = (self.cfg.d_model, self.cfg.d_head(), self.cfg.num_heads);
        let n = tokens.len();
        let mut xs: Vec<Vec<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(p, t)| {
                (0..d)
                    .map(|i| self.w.token_embedding[[*t as usize, i]] + self.w.position_embedding[[p, i]])
                    .collect()
            })
            .collect();
        let mut last_rows = Vec::new();
        for (l, lw) in self.w.layers.iter().enumerate() {
            let gain: Vec<f64> = lw.attn_norm.to_vec();
            let hs: Vec<Vec<f64>> = xs.iter().map(|x| self.norm(x, &gain)).collect();
            let q: Vec<Vec<f64>> = hs.iter().map(|h| Self::matvec(&lw.w_q, h)).collect();
            let k: Vec<Vec<f64>> = hs.iter().map(|h| Self::matvec(&lw.w_k, h)).collect();
            let v: Vec<Vec<f64>> = hs.iter().map(|h| Self::matvec(&lw.w_v, h)).collect();
            let mut layer_rows = vec![Vec::new(); heads];
            for i in 0..n {
                let mut attn = vec![0.0; d];
                for (h, row_out) in layer_rows.iter_mut().enumerate() {
                    let bias = self
                        .w
                        .image_logit_bias
                        .as_ref()
                        .map_or(0.0, |b| *b.get(l, h));
                    let r = h * dh..(h + 1) * dh;
                    let scores: Vec<f64> = (0..=i)
                        .map(|j| {
                            let dot: f64 = r.clone().map(|c| q[i][c] * k[j][c]).sum();
                            dot / (dh as f64).sqrt() + if image_span.contains(&j) { bias } else { 0.0 }
                        })
                        .collect();
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = e.iter().sum();
                    let p: Vec<f64> = e.iter().map(|v| v / z).collect();
                    for c in r.clone() {
                        attn[c] = (0..=i).map(|j| p[j] * v[j][c]).sum();
                    }
                    if i + 1 == n {
                        *row_out = p;
                    }
                }
                let o = Self::matvec(&lw.w_o, &attn);
                for c in 0..d {
                    xs[i][c] += o[c];
                }
            }
            last_rows.push(layer_rows);
            for x in xs.iter_mut() {
                let h = self.norm(x, &lw.ffn_norm.to_vec());
                let up: Vec<f64> = Self::matvec(&lw.w_up, &h)
                    .into_iter()
                    .map(|u| {
                        let c = (2.0 / std::f64::consts::PI).sqrt();
                        0.5 * u * (1.0 + (c * (u + 0.044715 * u * u * u)).tanh())
                    })
                    .collect();
                let down = Self::matvec(&lw.w_down, &up);
                for c in 0..d {
                    x[c] += down[c];
                }
            }
        }
        let h = self.norm(&xs[n - 1], &self.w.final_norm.to_vec());
        RefOutput {
            logits: Self::matvec(&self.w.unembedding, &h),
            rows: last_rows,
        }
    }
}

/// Random small config, model seed included.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let layers = rng.random_range(1..=3);
    let heads = rng.random_range(1..=4);
    let d_head = [2, 4, 6][rng.random_range(0..3)];
    let vocab = rng.random_range(8..40);
    let mut cfg = ModelConfig::new(layers, heads, heads * d_head, vocab, 24, rng.random());
    if rng.random_bool(0.3) {
        cfg.normalization = Normalization::Identity;
        cfg.init_scale = 0.5;
    }
    cfg
}

pub fn random_model<T: Scalar>(rng: &mut ChaCha8Rng) -> Model<T> {
    build_model(&random_config(rng)).expect("valid random config")
}

/// Random prompt of length `2..=max_len` with a (possibly empty) image span.
pub fn random_prompt(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> MultimodalSequence {
    let len = rng.random_range(2..=max_len);
    let sys = rng.random_range(0..len);
    let img = rng.random_range(0..=len - sys);
    let roles: Vec<Role> = (0..len)
        .map(|p| {
            if p < sys {
                Role::System
            } else if p < sys + img {
                Role::Image
            } else {
                Role::Instruction
            }
        })
        .collect();
    let tokens = (0..len).map(|_| rng.random_range(0..vocab as TokenId)).collect();
    MultimodalSequence::from_parts(tokens, roles).expect("well-formed roles")
}

pub fn random_heads(rng: &mut ChaCha8Rng, layers: usize, heads: usize, p: f64) -> Vec<HeadId> {
    let mut out = Vec::new();
    for l in 0..layers {
        for h in 0..heads {
            if rng.random_bool(p) {
                out.push(HeadId::new(l, h));
            }
        }
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64_lossy() - y).abs())
        .fold(0.0, f64::max)
}

pub mod fixture {
    use maskcd::model::{GroundingOptions, LanguagePrior};
    use maskcd::synthdata::{corpus_stats, generate_scenes, Lexicon, PromptTemplate, Scene, SceneParams};
    use maskcd::{build_grounded_model, HeadId, Model, ModelConfig, Scalar};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub struct Fixture<T> {
        pub model: Model<T>,
        pub lexicon: Lexicon,
        pub template: PromptTemplate,
        pub heads: Vec<HeadId>,
        pub scenes: Vec<Scene>,
    }

    /// `k` grounding heads drawn at random from an `layers x heads` model
    /// with heads at least 16 wide; the prior, if requested, comes from the scenes.
    pub fn build<T: Scalar>(
        layers: usize,
        heads: usize,
        k: usize,
        n_scenes: usize,
        prior: bool,
        seed: u64,
    ) -> Fixture<T> {
        let lexicon = Lexicon::standard(12).unwrap();
        let template = PromptTemplate::standard(&lexicon);
        // Residual blocks need 83 dimensions for this lexicon and template.
        let d_head = 16usize.max(84usize.div_ceil(heads));
        let cfg = ModelConfig::new(layers, heads, heads * d_head, lexicon.vocab_size(), 40, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut planted: Vec<HeadId> = rand::seq::index::sample(&mut rng, layers * heads, k)
            .iter()
            .map(|i| HeadId::new(i / heads, i % heads))
            .collect();
        planted.sort_unstable();
        let scenes = generate_scenes(&lexicon, &SceneParams::default(), n_scenes, seed).unwrap();
        let options = GroundingOptions {
            prior: prior.then(|| LanguagePrior::contaminated(&corpus_stats(&scenes, &lexicon))),
            ..GroundingOptions::default()
        };
        let model = build_grounded_model(&cfg, &lexicon, &template, &planted, &options).unwrap();
        Fixture {
            model,
            lexicon,
            template,
            heads: planted,
            scenes,
        }
    }
}
