//! Constructed (not trained) model with planted image heads.
//!
//! The residual stream is split into disjoint blocks:
//!
//! | block   | width        | written by           | read by              |
//! |---------|--------------|----------------------|----------------------|
//! | `id`    | `vocab_size` | token embedding      | q/k/v, unembedding   |
//! | `qslot` | image budget | position embedding   | caption-head queries |
//! | `kslot` | image budget | position embedding   | caption-head keys    |
//! | `mode`  | 3            | position embedding   | unembedding          |
//! | `vis`   | objects + 4  | head outputs         | unembedding only     |
//!
//! Because no layer reads the `vis` block, every head's contribution reaches
//! the logits additively: with no normalization and zero feed-forward
//! weights, `logits = direct + sum(head outputs)`. Masking a set of heads
//! subtracts exactly their share.
//!
//! Grounding heads get a large additive bias on image keys (image mass of at
//! least `grounding_mass` at every step). They alternate between two jobs:
//! caption heads read image slot `g` at generation step `g` and emit the
//! slot's object word (or separator / end-of-caption for background and end
//! slots); answer heads match the queried object word against the image and
//! vote "yes" with the mass found on object slots and "no" with the mass
//! left on background and end slots. All remaining heads are weak caption heads
//! whose image mass stays at or below `weak_mass_range.1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::weights::Weights;
use super::{Model, ModelConfig, Normalization, TokenId};
use crate::error::{Error, Result};
use crate::grid::{HeadGrid, HeadId};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::synthdata::{Lexicon, ObjectStats, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadRole {
    /// Grounding head copying slot contents into caption words.
    Caption,
    /// Grounding head answering "is there a <object>?".
    Answer,
    /// Non-grounding head with low image attention.
    Weak,
}

/// Corpus-derived language prior: the "hallucination pathway" that survives
/// image-head masking.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguagePrior {
    /// Per object, scaled so the most frequent object is 1.
    pub popularity: Vec<f64>,
    /// Pair counts scaled so the most frequent pair is 1; diagonal 0.
    pub cooccurrence: Vec<Vec<f64>>,
    /// Logit added to popular object words at every caption step.
    pub caption_strength: f64,
    /// Logit added to partners of the previously generated object word.
    pub cooccurrence_strength: f64,
    /// "Yes" logit added for popular queried objects.
    pub answer_strength: f64,
    /// Share of the match sharpness that answer heads give to co-occurring
    /// objects, in `[0, 1)`.
    pub confusion: f64,
}

impl LanguagePrior {
    /// Prior strong enough to override weak visual evidence for rare
    /// objects: captions swap rare objects for popular ones and probing
    /// questions about popular or co-occurring absent objects get "yes".
    pub fn contaminated(stats: &ObjectStats) -> Self {
        Self {
            caption_strength: 18.0,
            cooccurrence_strength: 4.0,
            answer_strength: 5.0,
            confusion: 0.6,
            ..Self::from_stats(stats)
        }
    }

    /// Normalized statistics with all strengths at zero.
    pub fn from_stats(stats: &ObjectStats) -> Self {
        let max_f = stats.frequency.iter().copied().max().unwrap_or(0).max(1) as f64;
        let popularity = stats.frequency.iter().map(|f| *f as f64 / max_f).collect();
        let max_c = stats
            .cooccurrence
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i))
            .map(|(_, c)| *c)
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let cooccurrence = stats
            .cooccurrence
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, c)| if j == i { 0.0 } else { *c as f64 / max_c })
                    .collect()
            })
            .collect();
        Self {
            popularity,
            cooccurrence,
            caption_strength: 0.0,
            cooccurrence_strength: 0.0,
            answer_strength: 0.0,
            confusion: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingOptions {
    /// Object-word logit delivered by all caption heads together.
    pub visual_strength: f64,
    /// Separator / end-of-caption logit delivered by all caption heads.
    pub structure_strength: f64,
    /// Yes/no vote delivered by all answer heads together.
    pub answer_strength: f64,
    /// Extra "no" logit at the answer position.
    pub answer_threshold: f64,
    /// Visual evidence of all weak heads together at the first caption
    /// step, relative to the grounding caption heads.
    pub weak_fraction: f64,
    /// Per-head maximum image mass of weak heads is drawn from this range.
    pub weak_mass_range: (f64, f64),
    /// Lower bound on grounding heads' image mass.
    pub grounding_mass: f64,
    /// Attention-logit gap of an exact slot or object match.
    pub match_sharpness: f64,
    /// Attention-logit of background/end slots for answer heads.
    pub null_sharpness: f64,
    /// Logit gap used to gate token classes by position.
    pub mode_margin: f64,
    pub prior: Option<LanguagePrior>,
}

impl Default for GroundingOptions {
    fn default() -> Self {
        Self {
            visual_strength: 10.0,
            structure_strength: 20.0,
            answer_strength: 8.0,
            answer_threshold: 0.0,
            weak_fraction: 0.3,
            weak_mass_range: (0.1, 0.4),
            grounding_mass: 0.95,
            match_sharpness: 12.0,
            null_sharpness: 6.0,
            mode_margin: 40.0,
            prior: None,
        }
    }
}

impl GroundingOptions {
    fn validate(&self, n_objects: usize) -> Result<()> {
        let finite = [
            self.visual_strength,
            self.structure_strength,
            self.answer_strength,
            self.answer_threshold,
            self.weak_fraction,
            self.match_sharpness,
            self.null_sharpness,
            self.mode_margin,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("grounding strengths must be finite and >= 0".into()));
        }
        let (lo, hi) = self.weak_mass_range;
        if !(0.0 < lo && lo <= hi && hi < 0.5) {
            return Err(Error::InvalidConfig("weak_mass_range must satisfy 0 < lo <= hi < 0.5".into()));
        }
        if !(0.5 < self.grounding_mass && self.grounding_mass < 1.0) {
            return Err(Error::InvalidConfig("grounding_mass must lie in (0.5, 1)".into()));
        }
        if let Some(p) = &self.prior {
            if p.popularity.len() != n_objects
                || p.cooccurrence.len() != n_objects
                || p.cooccurrence.iter().any(|r| r.len() != n_objects)
            {
                return Err(Error::InvalidConfig("language prior does not match the lexicon".into()));
            }
            if !(0.0..1.0).contains(&p.confusion) {
                return Err(Error::InvalidConfig("confusion must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Offsets of the residual blocks.
#[derive(Debug, Clone, Copy)]
struct Blocks {
    qslot: usize,
    kslot: usize,
    caption_mode: usize,
    eos_mode: usize,
    answer_mode: usize,
    vis_obj: usize,
    vis_sep: usize,
    vis_eos: usize,
    vis_yes: usize,
    vis_no: usize,
    used: usize,
}

impl Blocks {
    fn new(vocab: usize, budget: usize, n_objects: usize) -> Self {
        let qslot = vocab;
        let kslot = qslot + budget;
        let caption_mode = kslot + budget;
        let vis_obj = caption_mode + 3;
        let vis_sep = vis_obj + n_objects;
        Self {
            qslot,
            kslot,
            caption_mode,
            eos_mode: caption_mode + 1,
            answer_mode: caption_mode + 2,
            vis_obj,
            vis_sep,
            vis_eos: vis_sep + 1,
            vis_yes: vis_sep + 2,
            vis_no: vis_sep + 3,
            used: vis_sep + 4,
        }
    }
}

/// Head roles and positions of a grounded model.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingLayout {
    roles: HeadGrid<HeadRole>,
    /// Position whose output is the first caption token.
    pub caption_start: usize,
    /// Position whose output is the yes/no answer.
    pub answer_position: usize,
}

impl GroundingLayout {
    pub fn new(
        config: &ModelConfig,
        lexicon: &Lexicon,
        template: &PromptTemplate,
        grounding_heads: &[HeadId],
    ) -> Result<Self> {
        config.validate()?;
        if grounding_heads.is_empty() {
            return Err(Error::InvalidConfig("grounding head set is empty".into()));
        }
        for h in grounding_heads {
            if h.layer >= config.num_layers || h.head >= config.num_heads {
                return Err(Error::HeadOutOfRange {
                    layer: h.layer,
                    head: h.head,
                    layers: config.num_layers,
                    heads: config.num_heads,
                });
            }
        }
        let mut sorted = grounding_heads.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut roles = HeadGrid::filled(config.num_layers, config.num_heads, HeadRole::Weak);
        for (k, h) in sorted.iter().enumerate() {
            *roles.get_mut(h.layer, h.head) = if k % 2 == 0 {
                HeadRole::Caption
            } else {
                HeadRole::Answer
            };
        }

        let budget = template.image_budget;
        let n = lexicon.len();
        if budget == 0 {
            return Err(Error::InvalidConfig("image budget must be positive".into()));
        }
        if config.vocab_size < lexicon.vocab_size() {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} smaller than lexicon vocabulary {}",
                config.vocab_size,
                lexicon.vocab_size()
            )));
        }
        let need_head = budget.max(n + 2);
        if config.d_head() < need_head {
            return Err(Error::InvalidConfig(format!(
                "grounded model needs d_head >= {need_head}, got {}",
                config.d_head()
            )));
        }
        let blocks = Blocks::new(config.vocab_size, budget, n);
        if config.d_model < blocks.used {
            return Err(Error::InvalidConfig(format!(
                "grounded model needs d_model >= {}, got {}",
                blocks.used, config.d_model
            )));
        }
        let caption_start = template.caption_prompt_len() - 1;
        let answer_position = template.question_prompt_len() - 1;
        if answer_position >= caption_start {
            return Err(Error::InvalidConfig(
                "question prompts must be shorter than caption prompts".into(),
            ));
        }
        if config.max_seq_len < caption_start + budget + 1 {
            return Err(Error::InvalidConfig(format!(
                "max_seq_len must be at least {}",
                caption_start + budget + 1
            )));
        }
        if template.system.len() + template.caption_instruction.len() == 0 {
            return Err(Error::InvalidConfig("caption prompt needs at least one text token".into()));
        }
        Ok(Self {
            roles,
            caption_start,
            answer_position,
        })
    }

    pub fn role(&self, id: HeadId) -> HeadRole {
        *self.roles.at(id)
    }

    pub fn roles(&self) -> &HeadGrid<HeadRole> {
        &self.roles
    }

    pub fn grounding_heads(&self) -> Vec<HeadId> {
        self.roles
            .iter()
            .filter(|(_, r)| **r != HeadRole::Weak)
            .map(|(id, _)| id)
            .collect()
    }
}

/// Builds a model in which exactly `grounding_heads` attend to the image
/// span and carry object identity to the logits.
///
/// The supplied config is used with `normalization` forced to
/// [`Normalization::Identity`]; feed-forward weights are zero. Weak-head
/// masses are drawn from a generator seeded by `config.rng_seed`.
pub fn build_grounded_model<T: Scalar>(
    config: &ModelConfig,
    lexicon: &Lexicon,
    template: &PromptTemplate,
    grounding_heads: &[HeadId],
    options: &GroundingOptions,
) -> Result<Model<T>> {
    let layout = GroundingLayout::new(config, lexicon, template, grounding_heads)?;
    options.validate(lexicon.len())?;
    let mut cfg = config.clone();
    cfg.normalization = Normalization::Identity;

    let n = lexicon.len();
    let budget = template.image_budget;
    let vocab = cfg.vocab_size;
    let dh = cfg.d_head();
    let sqrt_dh = (dh as f64).sqrt();
    let blk = Blocks::new(vocab, budget, n);
    let sp = lexicon.specials();
    let sys = template.system.len();
    let beta = options.match_sharpness;

    let mut w = Weights::<f64>::zeros(&cfg);

    for t in 0..vocab {
        w.token_embedding[[t, t]] = 1.0;
    }
    for g in 0..budget {
        w.position_embedding[[sys + g, blk.kslot + g]] = 1.0;
    }
    for pos in layout.caption_start..cfg.max_seq_len {
        let g = pos - layout.caption_start;
        w.position_embedding[[pos, blk.caption_mode]] = 1.0;
        if g < budget {
            w.position_embedding[[pos, blk.qslot + g]] = 1.0;
        } else {
            w.position_embedding[[pos, blk.eos_mode]] = 1.0;
        }
    }
    w.position_embedding[[layout.answer_position, blk.answer_mode]] = 1.0;

    let ids = |t: TokenId| t as usize;
    let text_tokens = |i: usize| {
        let o = lexicon.object(i);
        std::iter::once(o.token).chain(o.synonyms.clone())
    };

    // Attention biases on image keys.
    let n_text_max = (cfg.max_seq_len - budget) as f64;
    let gm = options.grounding_mass;
    let grounding_bias = (gm / (1.0 - gm) * n_text_max / budget as f64).ln();
    let n_text_min = (sys + template.caption_instruction.len()) as f64;
    let slot_weight = beta.exp() + (budget as f64 - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, "grounded-weak-mass"));
    let (lo, hi) = options.weak_mass_range;
    let weak_mass = HeadGrid::from_fn(cfg.num_layers, cfg.num_heads, |_| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    });
    let bias = HeadGrid::from_fn(cfg.num_layers, cfg.num_heads, |id| match layout.role(id) {
        HeadRole::Weak => {
            let m = *weak_mass.at(id);
            (m / (1.0 - m) * n_text_min / slot_weight).ln()
        }
        _ => grounding_bias,
    });

    let count = |role| layout.roles.as_slice().iter().filter(|r| **r == role).count();
    let n_caption = count(HeadRole::Caption);
    let n_answer = count(HeadRole::Answer);
    let weak_total_mass: f64 = layout
        .roles
        .iter()
        .filter(|(_, r)| **r == HeadRole::Weak)
        .map(|(id, _)| *weak_mass.at(id))
        .sum();

    for (id, role) in layout.roles.iter() {
        let layer = &mut w.layers[id.layer];
        let r0 = id.head * dh;
        match role {
            HeadRole::Caption | HeadRole::Weak => {
                let share = match role {
                    HeadRole::Caption => 1.0 / n_caption as f64,
                    _ if weak_total_mass > 0.0 => options.weak_fraction / weak_total_mass,
                    _ => 0.0,
                };
                for g in 0..budget {
                    layer.w_q[[r0 + g, blk.qslot + g]] = beta * sqrt_dh;
                    layer.w_k[[r0 + g, blk.kslot + g]] = 1.0;
                }
                for i in 0..n {
                    layer.w_v[[r0 + i, ids(lexicon.object(i).image_token)]] = 1.0;
                    layer.w_o[[blk.vis_obj + i, r0 + i]] = share * options.visual_strength;
                }
                layer.w_v[[r0 + n, ids(sp.image_background)]] = 1.0;
                layer.w_v[[r0 + n + 1, ids(sp.image_end)]] = 1.0;
                layer.w_o[[blk.vis_sep, r0 + n]] = share * options.structure_strength;
                layer.w_o[[blk.vis_eos, r0 + n + 1]] = share * options.structure_strength;
            }
            HeadRole::Answer => {
                let confusion = options.prior.as_ref().map_or(0.0, |p| p.confusion);
                for i in 0..n {
                    for t in text_tokens(i) {
                        layer.w_q[[r0 + i, ids(t)]] = beta * sqrt_dh;
                        layer.w_q[[r0 + n, ids(t)]] = options.null_sharpness * sqrt_dh;
                        if let Some(p) = &options.prior {
                            for j in (0..n).filter(|j| *j != i) {
                                layer.w_q[[r0 + j, ids(t)]] +=
                                    confusion * beta * sqrt_dh * p.cooccurrence[i][j];
                            }
                        }
                    }
                    layer.w_k[[r0 + i, ids(lexicon.object(i).image_token)]] = 1.0;
                    layer.w_v[[r0, ids(lexicon.object(i).image_token)]] = 1.0;
                }
                for t in [sp.image_background, sp.image_end] {
                    layer.w_k[[r0 + n, ids(t)]] = 1.0;
                    layer.w_v[[r0 + 1, ids(t)]] = 1.0;
                }
                let vote = options.answer_strength / n_answer as f64;
                layer.w_o[[blk.vis_yes, r0]] = vote;
                layer.w_o[[blk.vis_no, r0 + 1]] = vote;
            }
        }
    }

    let u = &mut w.unembedding;
    let m = options.mode_margin;
    for i in 0..n {
        u[[ids(lexicon.object(i).token), blk.vis_obj + i]] = 1.0;
    }
    u[[ids(sp.separator), blk.vis_sep]] = 1.0;
    u[[ids(sp.eos), blk.vis_eos]] = 1.0;
    u[[ids(sp.yes), blk.vis_yes]] = 1.0;
    u[[ids(sp.no), blk.vis_no]] = 1.0;
    u[[ids(sp.yes), blk.caption_mode]] = -m;
    u[[ids(sp.no), blk.caption_mode]] = -m;
    u[[ids(sp.eos), blk.eos_mode]] = m;
    u[[ids(sp.yes), blk.answer_mode]] = m;
    u[[ids(sp.no), blk.answer_mode]] = m + options.answer_threshold;
    if let Some(p) = &options.prior {
        for j in 0..n {
            let word = ids(lexicon.object(j).token);
            u[[word, blk.caption_mode]] += p.caption_strength * p.popularity[j];
        }
        for i in 0..n {
            for t in text_tokens(i) {
                for j in (0..n).filter(|j| *j != i) {
                    u[[ids(lexicon.object(j).token), ids(t)]] +=
                        p.cooccurrence_strength * p.cooccurrence[i][j];
                }
                u[[ids(sp.yes), ids(t)]] += p.answer_strength * p.popularity[i];
            }
        }
    }

    w.image_logit_bias = Some(bias);
    Model::from_weights(cfg, cast_weights(w))
}

fn cast_weights<T: Scalar>(w: Weights<f64>) -> Weights<T> {
    use super::LayerWeights;
    let c2 = |m: ndarray::Array2<f64>| m.mapv(T::of);
    let c1 = |m: ndarray::Array1<f64>| m.mapv(T::of);
    Weights {
        token_embedding: c2(w.token_embedding),
        position_embedding: c2(w.position_embedding),
        layers: w
            .layers
            .into_iter()
            .map(|l| LayerWeights {
                attn_norm: c1(l.attn_norm),
                w_q: c2(l.w_q),
                w_k: c2(l.w_k),
                w_v: c2(l.w_v),
                w_o: c2(l.w_o),
                ffn_norm: c1(l.ffn_norm),
                w_up: c2(l.w_up),
                w_down: c2(l.w_down),
            })
            .collect(),
        final_norm: c1(w.final_norm),
        unembedding: c2(w.unembedding),
        image_logit_bias: w.image_logit_bias.map(|b| b.map(|v| T::of(*v))),
    }
}
