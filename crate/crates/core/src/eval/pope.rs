use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::decoding::{decode_baseline, decode_maskcd, DecodeParams, LogitSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthdata::{question_prompt, Answer, Lexicon, PopeQuestion, PromptTemplate, Scene};
use crate::trace::ImageHeadMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeAnswer {
    pub question: PopeQuestion,
    pub predicted: Option<Answer>,
    /// The model emitted neither the yes nor the no token; `predicted` is
    /// then `No`.
    #[serde(default)]
    pub invalid: bool,
}

/// Confusion counts with "yes" as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub invalid: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Share of "yes" predictions.
    pub yes_ratio: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn pope_metrics(answers: &[PopeAnswer]) -> Result<PopeReport> {
    let (mut tp, mut fp, mut tn, mut fn_, mut invalid) = (0, 0, 0, 0, 0);
    for (i, a) in answers.iter().enumerate() {
        let predicted = a.predicted.ok_or(Error::Unanswered(i))?;
        invalid += usize::from(a.invalid);
        match (predicted, a.question.truth) {
            (Answer::Yes, Answer::Yes) => tp += 1,
            (Answer::Yes, Answer::No) => fp += 1,
            (Answer::No, Answer::No) => tn += 1,
            (Answer::No, Answer::Yes) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PopeReport {
        tp,
        fp,
        tn,
        fn_,
        invalid,
        precision,
        recall,
        f1,
        accuracy: ratio(tp + tn, answers.len()),
        yes_ratio: ratio(tp + fp, answers.len()),
    })
}

/// Asks every question and reads the first generated token.
///
/// With a mask the answer comes from contrastive decoding, otherwise from
/// the baseline. Tokens other than yes/no count as "no" and are flagged.
pub fn answer_pope<T, S>(
    model: &S,
    mask: Option<&ImageHeadMask>,
    questions: &[PopeQuestion],
    scenes: &[Scene],
    lexicon: &Lexicon,
    template: &PromptTemplate,
    params: &DecodeParams,
) -> Result<Vec<PopeAnswer>>
where
    T: Scalar,
    S: LogitSource<T>,
{
    let by_id: HashMap<usize, &Scene> = scenes.iter().map(|s| (s.scene_id, s)).collect();
    let sp = lexicon.specials();
    questions
        .iter()
        .map(|q| {
            let scene = by_id.get(&q.scene_id).ok_or(Error::MissingScene(q.scene_id))?;
            if q.object >= lexicon.len() {
                return Err(Error::InvalidParams(format!("object {} not in lexicon", q.object)));
            }
            let prompt = question_prompt(scene, q.object, lexicon, template, model.max_seq_len())?;
            let out = match mask {
                Some(m) => decode_maskcd(model, m, &prompt, params)?,
                None => decode_baseline(model, &prompt, params)?,
            };
            let first = out.tokens.first().copied();
            let (predicted, invalid) = match first {
                Some(t) if t == sp.yes => (Answer::Yes, false),
                Some(t) if t == sp.no => (Answer::No, false),
                _ => (Answer::No, true),
            };
            Ok(PopeAnswer {
                question: q.clone(),
                predicted: Some(predicted),
                invalid,
            })
        })
        .collect()
}
