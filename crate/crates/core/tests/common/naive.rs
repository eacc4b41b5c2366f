//! Brute-force recounts of CHAIR and POPE, written without the library's
//! metric code.

#![allow(dead_code)]

use std::collections::HashSet;

use maskcd::synthdata::{Answer, LexObject, Lexicon, Scene};
use maskcd::TokenId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct NaiveChair {
    pub sentences: usize,
    pub bad_sentences: usize,
    pub mentioned: usize,
    pub bad_mentions: usize,
}

fn canonical(lexicon: &Lexicon, t: TokenId) -> Option<String> {
    lexicon
        .objects()
        .iter()
        .find(|o: &&LexObject| o.token == t || o.synonyms.contains(&t))
        .map(|o| o.name.clone())
}

pub fn chair(captions: &[(usize, Vec<TokenId>)], scenes: &[Scene], lexicon: &Lexicon) -> NaiveChair {
    let sep = lexicon.specials().separator;
    let mut out = NaiveChair {
        sentences: 0,
        bad_sentences: 0,
        mentioned: 0,
        bad_mentions: 0,
    };
    for (scene_id, tokens) in captions {
        let scene = scenes.iter().find(|s| s.scene_id == *scene_id).unwrap();
        let present: HashSet<String> = scene
            .objects
            .iter()
            .map(|o| lexicon.object(*o).name.clone())
            .collect();
        for sentence in tokens.split(|t| *t == sep) {
            if sentence.is_empty() {
                continue;
            }
            out.sentences += 1;
            if sentence
                .iter()
                .filter_map(|t| canonical(lexicon, *t))
                .any(|name| !present.contains(&name))
            {
                out.bad_sentences += 1;
            }
        }
        let unique: HashSet<String> = tokens.iter().filter_map(|t| canonical(lexicon, *t)).collect();
        out.mentioned += unique.len();
        out.bad_mentions += unique.iter().filter(|n| !present.contains(*n)).count();
    }
    out
}

/// `(tp, fp, tn, fn)` from `(truth, predicted)` pairs.
pub fn confusion(pairs: &[(Answer, Answer)]) -> (usize, usize, usize, usize) {
    let count = |t, p| pairs.iter().filter(|(a, b)| *a == t && *b == p).count();
    (
        count(Answer::Yes, Answer::Yes),
        count(Answer::No, Answer::Yes),
        count(Answer::No, Answer::No),
        count(Answer::Yes, Answer::No),
    )
}

/// Random scenes (ids `0..n`) and captions over the whole vocabulary, with
/// extra weight on separators and object words.
pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    lexicon: &Lexicon,
    n: usize,
) -> (Vec<Scene>, Vec<(usize, Vec<TokenId>)>) {
    let scenes: Vec<Scene> = (0..n)
        .map(|id| {
            let mut objects: Vec<usize> = (0..lexicon.len()).filter(|_| rng.random_bool(0.25)).collect();
            if objects.is_empty() {
                objects.push(rng.random_range(0..lexicon.len()));
            }
            objects.sort_unstable();
            Scene {
                scene_id: id,
                objects,
                image: Vec::new(),
            }
        })
        .collect();
    let sep = lexicon.specials().separator;
    let captions = (0..n)
        .map(|id| {
            let len = rng.random_range(0..12);
            let tokens = (0..len)
                .map(|_| match rng.random_range(0..4) {
                    0 => sep,
                    1 => {
                        let o = lexicon.object(rng.random_range(0..lexicon.len()));
                        if o.synonyms.is_empty() || rng.random_bool(0.5) {
                            o.token
                        } else {
                            o.synonyms[0]
                        }
                    }
                    _ => rng.random_range(0..lexicon.vocab_size() as TokenId),
                })
                .collect();
            (id, tokens)
        })
        .collect();
    (scenes, captions)
}
