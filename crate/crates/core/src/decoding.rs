//! Greedy baseline decoding and head-masked contrastive decoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IncrementalState, Model, MultimodalSequence, StepOutput, TokenId};
use crate::scalar::Scalar;
use crate::trace::ImageHeadMask;

/// Anything that produces next-token logits and attention rows for a
/// sequence, optionally under a head mask and with reusable state.
pub trait LogitSource<T> {
    type State;

    /// `(layers, heads)`.
    fn head_shape(&self) -> (usize, usize);

    fn max_seq_len(&self) -> usize;

    fn step(
        &self,
        seq: &MultimodalSequence,
        mask: Option<&ImageHeadMask>,
        state: Option<Self::State>,
    ) -> Result<(StepOutput<T>, Self::State)>;
}

impl<T: Scalar> LogitSource<T> for Model<T> {
    type State = IncrementalState<T>;

    fn head_shape(&self) -> (usize, usize) {
        (self.config().num_layers, self.config().num_heads)
    }

    fn max_seq_len(&self) -> usize {
        self.config().max_seq_len
    }

    fn step(
        &self,
        seq: &MultimodalSequence,
        mask: Option<&ImageHeadMask>,
        state: Option<Self::State>,
    ) -> Result<(StepOutput<T>, Self::State)> {
        self.forward_step(seq, mask, state)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Argmax; ties go to the lowest token id.
    #[default]
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    /// Contrast intensity.
    pub alpha: f64,
    pub max_new_tokens: usize,
    #[serde(default)]
    pub strategy: Strategy,
    /// Generation stops after this token is emitted; it is kept in the output.
    #[serde(default)]
    pub stop_token: Option<TokenId>,
    /// Keep per-step logits in [`DecodeResult::steps`].
    #[serde(default)]
    pub record_logits: bool,
}

impl DecodeParams {
    pub fn greedy(alpha: f64, max_new_tokens: usize) -> Self {
        Self {
            alpha,
            max_new_tokens,
            strategy: Strategy::Greedy,
            stop_token: None,
            record_logits: false,
        }
    }

    pub fn with_stop(mut self, token: TokenId) -> Self {
        self.stop_token = Some(token);
        self
    }

    pub fn recording(mut self) -> Self {
        self.record_logits = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidParams(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidParams("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }

    fn check_headroom(&self, prompt: &MultimodalSequence, max_seq_len: usize) -> Result<()> {
        self.validate()?;
        if prompt.is_empty() {
            return Err(Error::InvalidSequence("empty prompt".into()));
        }
        let len = prompt.len() + self.max_new_tokens;
        if len > max_seq_len {
            return Err(Error::SequenceOverflow { len, max: max_seq_len });
        }
        Ok(())
    }
}

/// Logits seen at one generation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    pub base: Vec<T>,
    /// Head-masked branch; `None` for baseline decoding.
    pub masked: Option<Vec<T>>,
    /// Logits the token was chosen from.
    pub combined: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult<T> {
    /// Generated tokens, including the stop token when one was hit.
    pub tokens: Vec<TokenId>,
    /// Empty unless [`DecodeParams::record_logits`] was set.
    pub steps: Vec<StepRecord<T>>,
    pub forward_passes: usize,
    pub stopped: bool,
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Scalar>(logits: &[T]) -> Result<TokenId> {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        if *v > logits[best] {
            best = i;
        }
    }
    if logits.is_empty() {
        return Err(Error::InvalidParams("empty logit vector".into()));
    }
    Ok(best as TokenId)
}

/// `(1 + alpha) * base - alpha * masked`, evaluated as
/// `base + alpha * (base - masked)` so that `alpha = 0` and `base == masked`
/// return `base` exactly.
pub fn contrastive_combine<T: Scalar>(base: &[T], masked: &[T], alpha: f64) -> Result<Vec<T>> {
    if base.len() != masked.len() {
        return Err(Error::LengthMismatch(base.len(), masked.len()));
    }
    if !alpha.is_finite() {
        return Err(Error::InvalidParams(format!("alpha must be finite, got {alpha}")));
    }
    let a = T::of(alpha);
    base.iter()
        .zip(masked)
        .enumerate()
        .map(|(i, (b, m))| {
            if !b.is_finite() || !m.is_finite() {
                return Err(Error::NonFinite(i));
            }
            Ok(*b + a * (*b - *m))
        })
        .collect()
}

/// Numerically stable softmax in `f64`.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.to_f64_lossy())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Greedy decoding from `prompt`.
pub fn decode_baseline<T, S>(
    model: &S,
    prompt: &MultimodalSequence,
    params: &DecodeParams,
) -> Result<DecodeResult<T>>
where
    T: Scalar,
    S: LogitSource<T>,
{
    decode_baseline_observed(model, prompt, params, |_, _| Ok(()))
}

/// [`decode_baseline`] calling `observe(sequence, output)` at every step,
/// before the chosen token is appended.
pub fn decode_baseline_observed<T, S, F>(
    model: &S,
    prompt: &MultimodalSequence,
    params: &DecodeParams,
    mut observe: F,
) -> Result<DecodeResult<T>>
where
    T: Scalar,
    S: LogitSource<T>,
    F: FnMut(&MultimodalSequence, &StepOutput<T>) -> Result<()>,
{
    params.check_headroom(prompt, model.max_seq_len())?;
    let mut seq = prompt.clone();
    let mut state = None;
    let mut out = DecodeResult {
        tokens: Vec::with_capacity(params.max_new_tokens),
        steps: Vec::new(),
        forward_passes: 0,
        stopped: false,
    };
    for _ in 0..params.max_new_tokens {
        let (step, next) = model.step(&seq, None, state.take())?;
        out.forward_passes += 1;
        state = Some(next);
        observe(&seq, &step)?;
        let token = argmax(&step.logits)?;
        if params.record_logits {
            out.steps.push(StepRecord {
                base: step.logits.clone(),
                masked: None,
                combined: step.logits,
            });
        }
        out.tokens.push(token);
        seq.push_generated(token);
        if params.stop_token == Some(token) {
            out.stopped = true;
            break;
        }
    }
    Ok(out)
}

/// Contrastive decoding against the same model with `mask` applied.
///
/// Each step runs the unmasked and the masked branch on the shared sequence,
/// each with its own incremental state, and picks the argmax of
/// [`contrastive_combine`].
pub fn decode_maskcd<T, S>(
    model: &S,
    mask: &ImageHeadMask,
    prompt: &MultimodalSequence,
    params: &DecodeParams,
) -> Result<DecodeResult<T>>
where
    T: Scalar,
    S: LogitSource<T>,
{
    params.check_headroom(prompt, model.max_seq_len())?;
    let (layers, heads) = model.head_shape();
    mask.keep().check_shape(layers, heads)?;

    let mut seq = prompt.clone();
    let mut base_state = None;
    let mut masked_state = None;
    let mut out = DecodeResult {
        tokens: Vec::with_capacity(params.max_new_tokens),
        steps: Vec::new(),
        forward_passes: 0,
        stopped: false,
    };
    for _ in 0..params.max_new_tokens {
        let (base, next) = model.step(&seq, None, base_state.take())?;
        base_state = Some(next);
        let (masked, next) = model.step(&seq, Some(mask), masked_state.take())?;
        masked_state = Some(next);
        out.forward_passes += 2;

        let combined = contrastive_combine(&base.logits, &masked.logits, params.alpha)?;
        let token = argmax(&combined)?;
        if params.record_logits {
            out.steps.push(StepRecord {
                base: base.logits,
                masked: Some(masked.logits),
                combined,
            });
        }
        out.tokens.push(token);
        seq.push_generated(token);
        if params.stop_token == Some(token) {
            out.stopped = true;
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combine_examples() {
        let c = contrastive_combine(&[1.0f64, 2.0], &[2.0, 1.0], 1.0).unwrap();
        assert_eq!(c, vec![0.0, 3.0]);
        let base = [0.3f32, -1.7, 2.5];
        assert_eq!(contrastive_combine(&base, &base, 6.0).unwrap(), base.to_vec());
        assert_eq!(contrastive_combine(&base, &[9.0, 9.0, 9.0], 0.0).unwrap(), base.to_vec());
    }

    #[test]
    fn combine_errors() {
        assert!(matches!(
            contrastive_combine(&[1.0f64], &[1.0, 2.0], 1.0),
            Err(Error::LengthMismatch(1, 2))
        ));
        assert!(matches!(
            contrastive_combine(&[1.0f64, f64::NAN], &[1.0, 2.0], 1.0),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[1.0f64, 3.0, 3.0, 2.0]).unwrap(), 1);
        assert!(argmax::<f64>(&[]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(DecodeParams::greedy(-0.1, 4).validate().is_err());
        assert!(DecodeParams::greedy(1.0, 0).validate().is_err());
        assert!(DecodeParams::greedy(f64::INFINITY, 4).validate().is_err());
        assert!(DecodeParams::greedy(0.0, 1).validate().is_ok());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0f64, 1000.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }
}
