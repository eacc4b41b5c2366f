use std::ops::Range;

use ndarray::{s, Array1, ArrayView1};

use super::{Model, MultimodalSequence, Normalization, TokenId};
use crate::error::{Error, Result};
use crate::grid::HeadGrid;
use crate::scalar::Scalar;
use crate::trace::ImageHeadMask;

/// Logits for the next token plus the last query's attention row per head.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    /// Pre-softmax, length `vocab_size`.
    pub logits: Vec<T>,
    /// Row `(layer, head)` is a probability vector over the whole prefix.
    pub attention: HeadGrid<Vec<T>>,
}

/// Cached keys and values for prefix reuse.
///
/// A state is bound to the token prefix, image span and head mask it was
/// built with; feeding it a diverging request is an error.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalState<T> {
    tokens: Vec<TokenId>,
    image_span: Range<usize>,
    masked: Option<Vec<bool>>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

impl<T> IncrementalState<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }
}

fn masked_bits(mask: Option<&ImageHeadMask>) -> Option<Vec<bool>> {
    mask.filter(|m| m.num_image_heads() > 0)
        .map(|m| m.keep().as_slice().iter().map(|keep| !keep).collect())
}

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    T::of(0.5) * x * (T::one() + (c * (x + T::of(0.044715) * x * x * x)).tanh())
}

impl<T: Scalar> Model<T> {
    fn normalize(&self, x: &Array1<T>, gain: &Array1<T>) -> Array1<T> {
        match self.config().normalization {
            Normalization::Identity => x.clone(),
            Normalization::RmsNorm => {
                let n = T::of(x.len() as f64);
                let ms = x.iter().fold(T::zero(), |acc, v| acc + *v * *v) / n;
                let inv = T::one() / (ms + T::of(self.config().norm_eps)).sqrt();
                x.iter().zip(gain.iter()).map(|(v, g)| *v * inv * *g).collect()
            }
        }
    }

    /// Runs the model over the positions of `seq` not yet covered by `state`
    /// and returns the output at the final position.
    ///
    /// With `head_mask`, heads whose bit is 0 contribute a zero vector to the
    /// attention output before `w_o`. Their attention rows are still reported.
    pub fn forward_step(
        &self,
        seq: &MultimodalSequence,
        head_mask: Option<&ImageHeadMask>,
        state: Option<IncrementalState<T>>,
    ) -> Result<(StepOutput<T>, IncrementalState<T>)> {
        let cfg = self.config();
        let (layers, heads) = (cfg.num_layers, cfg.num_heads);
        if seq.is_empty() {
            return Err(Error::InvalidSequence("empty sequence".into()));
        }
        if seq.len() > cfg.max_seq_len {
            return Err(Error::SequenceOverflow {
                len: seq.len(),
                max: cfg.max_seq_len,
            });
        }
        if let Some(bad) = seq.tokens().iter().find(|t| **t as usize >= cfg.vocab_size) {
            return Err(Error::InvalidSequence(format!(
                "token {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        if let Some(m) = head_mask {
            m.keep().check_shape(layers, heads)?;
        }
        let masked = masked_bits(head_mask);

        let mut state = match state {
            Some(st) => {
                if st.masked != masked {
                    return Err(Error::StateMismatch("head mask differs from the cached branch".into()));
                }
                if st.image_span != seq.image_span() {
                    return Err(Error::StateMismatch("image span changed".into()));
                }
                if st.len() >= seq.len() || !seq.tokens().starts_with(&st.tokens) {
                    return Err(Error::StateMismatch(
                        "sequence does not extend the cached prefix".into(),
                    ));
                }
                st
            }
            None => IncrementalState {
                tokens: Vec::with_capacity(seq.len()),
                image_span: seq.image_span(),
                masked,
                keys: vec![Vec::new(); layers],
                values: vec![Vec::new(); layers],
            },
        };

        let mut last = None;
        for pos in state.len()..seq.len() {
            let want_rows = pos + 1 == seq.len();
            last = Some(self.run_position(seq.tokens()[pos], pos, &mut state, want_rows));
            state.tokens.push(seq.tokens()[pos]);
        }
        let (logits, rows) = last.expect("at least one new position");
        let attention = HeadGrid::from_vec(layers, heads, rows.expect("rows requested"))?;
        Ok((StepOutput { logits, attention }, state))
    }

    fn run_position(
        &self,
        token: TokenId,
        pos: usize,
        state: &mut IncrementalState<T>,
        want_rows: bool,
    ) -> (Vec<T>, Option<Vec<Vec<T>>>) {
        let cfg = self.config();
        let w = self.weights();
        let d = cfg.d_model;
        let dh = cfg.d_head();
        let scale = T::one() / T::of(dh as f64).sqrt();
        let n = pos + 1;
        let span = state.image_span.clone();

        let mut x = &w.token_embedding.row(token as usize) + &w.position_embedding.row(pos);
        let mut rows = want_rows.then(|| Vec::with_capacity(cfg.total_heads()));

        for (l, layer) in w.layers.iter().enumerate() {
            let h = self.normalize(&x, &layer.attn_norm);
            let q = layer.w_q.dot(&h);
            state.keys[l].extend(layer.w_k.dot(&h).iter().copied());
            state.values[l].extend(layer.w_v.dot(&h).iter().copied());
            let keys = &state.keys[l];
            let values = &state.values[l];

            let mut attn_out = Array1::<T>::zeros(d);
            let mut scores = vec![T::zero(); n];
            for head in 0..cfg.num_heads {
                let off = head * dh;
                let qh: ArrayView1<T> = q.slice(s![off..off + dh]);
                let bias = w
                    .image_logit_bias
                    .as_ref()
                    .map_or(T::zero(), |b| *b.get(l, head));
                for (j, score) in scores.iter_mut().enumerate() {
                    let kj = &keys[j * d + off..j * d + off + dh];
                    let mut dot = T::zero();
                    for (a, b) in qh.iter().zip(kj) {
                        dot += *a * *b;
                    }
                    *score = dot * scale;
                    if span.contains(&j) {
                        *score += bias;
                    }
                }
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    sum += *sc;
                }
                for sc in scores.iter_mut() {
                    *sc /= sum;
                }

                let is_masked = state
                    .masked
                    .as_ref()
                    .is_some_and(|m| m[l * cfg.num_heads + head]);
                if !is_masked {
                    let mut out = attn_out.slice_mut(s![off..off + dh]);
                    for (j, a) in scores.iter().enumerate() {
                        let vj = &values[j * d + off..j * d + off + dh];
                        for (o, v) in out.iter_mut().zip(vj) {
                            *o += *a * *v;
                        }
                    }
                }
                if let Some(rows) = rows.as_mut() {
                    rows.push(scores.clone());
                }
            }
            x = x + layer.w_o.dot(&attn_out);

            let h = self.normalize(&x, &layer.ffn_norm);
            let up = layer.w_up.dot(&h).mapv(gelu);
            x = x + layer.w_down.dot(&up);
        }

        let logits = w.unembedding.dot(&self.normalize(&x, &w.final_norm)).to_vec();
        (logits, rows)
    }
}
