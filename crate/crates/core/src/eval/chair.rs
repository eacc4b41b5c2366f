use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::decoding::{decode_baseline, decode_maskcd, DecodeParams, LogitSource};
use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::scalar::Scalar;
use crate::synthdata::{make_prompt, Lexicon, ObjectId, PromptTemplate, Scene};
use crate::trace::ImageHeadMask;

/// A generated caption split into sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub scene_id: usize,
    pub tokens: Vec<TokenId>,
    /// Consecutive ranges covering `tokens`; each ends just after a
    /// separator, except possibly the last.
    pub sentences: Vec<Range<usize>>,
}

impl CaptionRecord {
    pub fn new(scene_id: usize, tokens: Vec<TokenId>, separator: TokenId) -> Self {
        let mut sentences = Vec::new();
        let mut start = 0;
        for (i, t) in tokens.iter().enumerate() {
            if *t == separator {
                sentences.push(start..i + 1);
                start = i + 1;
            }
        }
        if start < tokens.len() {
            sentences.push(start..tokens.len());
        }
        Self {
            scene_id,
            tokens,
            sentences,
        }
    }

    /// Drops everything from the first `stop` token on before splitting.
    pub fn from_generated(scene_id: usize, generated: &[TokenId], separator: TokenId, stop: TokenId) -> Self {
        let end = generated.iter().position(|t| *t == stop).unwrap_or(generated.len());
        Self::new(scene_id, generated[..end].to_vec(), separator)
    }

    pub fn sentence(&self, i: usize) -> &[TokenId] {
        &self.tokens[self.sentences[i].clone()]
    }
}

/// Objects named in a caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mentions {
    /// Per sentence, every mention in order (repeats kept).
    pub per_sentence: Vec<Vec<ObjectId>>,
    pub unique: BTreeSet<ObjectId>,
}

pub fn extract_objects(caption: &CaptionRecord, lexicon: &Lexicon) -> Mentions {
    let per_sentence: Vec<Vec<ObjectId>> = caption
        .sentences
        .iter()
        .map(|r| {
            caption.tokens[r.clone()]
                .iter()
                .filter_map(|t| lexicon.object_of_text(*t))
                .collect()
        })
        .collect();
    let unique = per_sentence.iter().flatten().copied().collect();
    Mentions {
        per_sentence,
        unique,
    }
}

/// Corpus-level CHAIR with the counts behind both ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairReport {
    pub captions: usize,
    /// Sentences holding at least one non-separator token.
    pub sentences: usize,
    pub hallucinated_sentences: usize,
    /// Unique objects per caption, summed over captions.
    pub mentioned_objects: usize,
    pub hallucinated_objects: usize,
    pub chair_s: f64,
    pub chair_i: f64,
    /// Set when no caption mentioned any object; `chair_i` is then 0.
    pub no_mentions: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn chair_metrics(captions: &[CaptionRecord], scenes: &[Scene], lexicon: &Lexicon) -> Result<ChairReport> {
    let by_id: HashMap<usize, &Scene> = scenes.iter().map(|s| (s.scene_id, s)).collect();
    let separator = lexicon.specials().separator;
    let (mut sentences, mut bad_sentences, mut mentioned, mut bad_objects) = (0, 0, 0, 0);
    for c in captions {
        let scene = by_id.get(&c.scene_id).ok_or(Error::MissingScene(c.scene_id))?;
        let m = extract_objects(c, lexicon);
        for (i, objs) in m.per_sentence.iter().enumerate() {
            if c.sentence(i).iter().all(|t| *t == separator) {
                continue;
            }
            sentences += 1;
            if objs.iter().any(|o| !scene.contains(*o)) {
                bad_sentences += 1;
            }
        }
        mentioned += m.unique.len();
        bad_objects += m.unique.iter().filter(|o| !scene.contains(**o)).count();
    }
    Ok(ChairReport {
        captions: captions.len(),
        sentences,
        hallucinated_sentences: bad_sentences,
        mentioned_objects: mentioned,
        hallucinated_objects: bad_objects,
        chair_s: ratio(bad_sentences, sentences),
        chair_i: ratio(bad_objects, mentioned),
        no_mentions: mentioned == 0,
    })
}

/// Captions every scene with the caption instruction of `template`; with a
/// mask the decode is contrastive, otherwise greedy baseline.
pub fn caption_scenes<T, S>(
    model: &S,
    mask: Option<&ImageHeadMask>,
    scenes: &[Scene],
    lexicon: &Lexicon,
    template: &PromptTemplate,
    params: &DecodeParams,
) -> Result<Vec<CaptionRecord>>
where
    T: Scalar,
    S: LogitSource<T>,
{
    let sp = lexicon.specials();
    let params = DecodeParams {
        stop_token: params.stop_token.or(Some(sp.eos)),
        ..params.clone()
    };
    scenes
        .iter()
        .map(|scene| {
            let prompt = make_prompt(scene, &template.caption_instruction, template, model.max_seq_len())?;
            let out = match mask {
                Some(m) => decode_maskcd(model, m, &prompt, &params)?,
                None => decode_baseline(model, &prompt, &params)?,
            };
            Ok(CaptionRecord::from_generated(scene.scene_id, &out.tokens, sp.separator, sp.eos))
        })
        .collect()
}
