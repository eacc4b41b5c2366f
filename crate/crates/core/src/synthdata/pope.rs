use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{corpus_stats, Lexicon, ObjectId, Scene};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
}

/// How absent objects are chosen for negative questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopeSplit {
    /// Uniformly at random.
    Random,
    /// Most frequent in the corpus.
    Popular,
    /// Most often co-occurring with the scene's objects.
    Adversarial,
}

impl PopeSplit {
    pub const ALL: [PopeSplit; 3] = [PopeSplit::Random, PopeSplit::Popular, PopeSplit::Adversarial];
}

impl fmt::Display for PopeSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PopeSplit::Random => "random",
            PopeSplit::Popular => "popular",
            PopeSplit::Adversarial => "adversarial",
        })
    }
}

impl FromStr for PopeSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PopeSplit::Random),
            "popular" => Ok(PopeSplit::Popular),
            "adversarial" => Ok(PopeSplit::Adversarial),
            other => Err(Error::parse("split", 0, format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeQuestion {
    pub scene_id: usize,
    pub object: ObjectId,
    pub truth: Answer,
    pub split: PopeSplit,
}

/// `per_scene / 2` positive and `per_scene / 2` negative questions per scene.
///
/// Frequencies and co-occurrences are measured over `scenes` itself; ties go
/// to the lower token id.
pub fn build_pope_questions(
    scenes: &[Scene],
    lexicon: &Lexicon,
    per_scene: usize,
    split: PopeSplit,
    seed: u64,
) -> Result<Vec<PopeQuestion>> {
    if per_scene == 0 || !per_scene.is_multiple_of(2) {
        return Err(Error::Infeasible(format!("per_scene must be even and positive, got {per_scene}")));
    }
    let half = per_scene / 2;
    let stats = corpus_stats(scenes, lexicon);
    let token = |o: ObjectId| lexicon.object(o).token;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(scenes.len() * per_scene);

    for scene in scenes {
        let absent: Vec<ObjectId> = (0..lexicon.len()).filter(|o| !scene.contains(*o)).collect();
        if scene.objects.len() < half || absent.len() < half {
            return Err(Error::Infeasible(format!(
                "scene {} has {} present and {} absent objects, need {half} of each",
                scene.scene_id,
                scene.objects.len(),
                absent.len()
            )));
        }
        let mut positives: Vec<ObjectId> = scene.objects.choose_multiple(&mut rng, half).copied().collect();
        positives.sort_unstable();

        let negatives: Vec<ObjectId> = match split {
            PopeSplit::Random => {
                let mut v: Vec<_> = absent.choose_multiple(&mut rng, half).copied().collect();
                v.sort_unstable();
                v
            }
            PopeSplit::Popular => {
                let mut v = absent.clone();
                v.sort_by(|a, b| {
                    stats.frequency[*b]
                        .cmp(&stats.frequency[*a])
                        .then(token(*a).cmp(&token(*b)))
                });
                v.truncate(half);
                v
            }
            PopeSplit::Adversarial => {
                let score = |o: ObjectId| -> usize {
                    scene.objects.iter().map(|p| stats.cooccurrence[o][*p]).sum()
                };
                let mut v = absent.clone();
                v.sort_by(|a, b| score(*b).cmp(&score(*a)).then(token(*a).cmp(&token(*b))));
                v.truncate(half);
                v
            }
        };

        out.extend(positives.into_iter().map(|object| PopeQuestion {
            scene_id: scene.scene_id,
            object,
            truth: Answer::Yes,
            split,
        }));
        out.extend(negatives.into_iter().map(|object| PopeQuestion {
            scene_id: scene.scene_id,
            object,
            truth: Answer::No,
            split,
        }));
    }
    Ok(out)
}
