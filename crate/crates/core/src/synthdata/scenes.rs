use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Lexicon, ObjectId};
use crate::error::{Error, Result};
use crate::model::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Number of image tokens per scene.
    pub image_budget: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that a trailing end-of-image slot (after the first) is
    /// replaced by a noise token carrying no object.
    pub distractor_rate: f64,
    /// Object `i` has base weight `1 / (i + 1)^zipf_exponent`.
    pub zipf_exponent: f64,
    /// Objects are grouped into `contexts` by `id % contexts`; each scene
    /// draws one context whose objects get `context_boost` extra weight.
    pub contexts: usize,
    pub context_boost: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            image_budget: 8,
            min_objects: 1,
            max_objects: 4,
            distractor_rate: 0.0,
            zipf_exponent: 1.0,
            contexts: 3,
            context_boost: 4.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self, lexicon: &Lexicon) -> Result<()> {
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::InvalidConfig("need 1 <= min_objects <= max_objects".into()));
        }
        if 2 * self.max_objects > self.image_budget {
            return Err(Error::InvalidConfig(format!(
                "image budget {} cannot hold {} objects with separators",
                self.image_budget, self.max_objects
            )));
        }
        if self.max_objects > lexicon.len() {
            return Err(Error::InvalidConfig("max_objects exceeds lexicon size".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::InvalidConfig("distractor_rate must be in [0, 1]".into()));
        }
        if self.contexts == 0 || self.context_boost.is_nan() || self.context_boost < 1.0 || !self.zipf_exponent.is_finite() {
            return Err(Error::InvalidConfig("invalid object frequency parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: usize,
    /// Sorted, duplicate-free.
    pub objects: Vec<ObjectId>,
    /// Image-span rendering, `image_budget` tokens.
    pub image: Vec<TokenId>,
}

impl Scene {
    pub fn contains(&self, object: ObjectId) -> bool {
        self.objects.binary_search(&object).is_ok()
    }

    /// Object `k` occupies slot `2k`, a background token follows each object
    /// except the last, and the remaining slots are end-of-image tokens.
    fn render(
        objects: &[ObjectId],
        lexicon: &Lexicon,
        params: &SceneParams,
        rng: &mut ChaCha8Rng,
    ) -> Vec<TokenId> {
        let sp = lexicon.specials();
        let mut image = Vec::with_capacity(params.image_budget);
        for (k, obj) in objects.iter().enumerate() {
            image.push(lexicon.object(*obj).image_token);
            if k + 1 < objects.len() {
                image.push(sp.image_background);
            }
        }
        image.push(sp.image_end);
        while image.len() < params.image_budget {
            if params.distractor_rate > 0.0 && rng.random_bool(params.distractor_rate) {
                image.push(sp.image_noise);
            } else {
                image.push(sp.image_end);
            }
        }
        image
    }

    /// Objects recovered from the image span.
    pub fn decode_image(image: &[TokenId], lexicon: &Lexicon) -> Vec<ObjectId> {
        let mut objs: Vec<_> = image.iter().filter_map(|t| lexicon.object_of_image(*t)).collect();
        objs.sort_unstable();
        objs
    }
}

fn object_weights(lexicon: &Lexicon, params: &SceneParams, context: usize) -> Vec<f64> {
    (0..lexicon.len())
        .map(|i| {
            let base = 1.0 / ((i + 1) as f64).powf(params.zipf_exponent);
            if i % params.contexts == context {
                base * params.context_boost
            } else {
                base
            }
        })
        .collect()
}

/// Generates `n` scenes with skewed, context-correlated object frequencies.
pub fn generate_scenes(
    lexicon: &Lexicon,
    params: &SceneParams,
    n: usize,
    seed: u64,
) -> Result<Vec<Scene>> {
    if n < 1 {
        return Err(Error::InvalidConfig("need at least one scene".into()));
    }
    params.validate(lexicon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::with_capacity(n);
    for scene_id in 0..n {
        let context = rng.random_range(0..params.contexts);
        let count = rng.random_range(params.min_objects..=params.max_objects);
        let mut weights = object_weights(lexicon, params, context);
        let mut objects = Vec::with_capacity(count);
        for _ in 0..count {
            let total: f64 = weights.iter().sum();
            let mut pick = rng.random_range(0.0..total);
            let mut chosen = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && pick < *w {
                    chosen = i;
                    break;
                }
                pick -= w;
            }
            while weights[chosen] == 0.0 {
                chosen -= 1;
            }
            weights[chosen] = 0.0;
            objects.push(chosen);
        }
        objects.sort_unstable();
        let image = Scene::render(&objects, lexicon, params, &mut rng);
        scenes.push(Scene {
            scene_id,
            objects,
            image,
        });
    }
    Ok(scenes)
}

/// Object frequencies and pairwise co-occurrence counts over a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectStats {
    pub frequency: Vec<usize>,
    pub cooccurrence: Vec<Vec<usize>>,
}

impl ObjectStats {
    /// Object ids by descending frequency, ties to the lower id.
    pub fn frequency_ranking(&self) -> Vec<ObjectId> {
        let mut ids: Vec<ObjectId> = (0..self.frequency.len()).collect();
        ids.sort_by(|a, b| self.frequency[*b].cmp(&self.frequency[*a]).then(a.cmp(b)));
        ids
    }
}

pub fn corpus_stats(scenes: &[Scene], lexicon: &Lexicon) -> ObjectStats {
    let n = lexicon.len();
    let mut frequency = vec![0; n];
    let mut cooccurrence = vec![vec![0; n]; n];
    for s in scenes {
        for (i, a) in s.objects.iter().enumerate() {
            frequency[*a] += 1;
            for b in &s.objects[i + 1..] {
                cooccurrence[*a][*b] += 1;
                cooccurrence[*b][*a] += 1;
            }
        }
    }
    ObjectStats {
        frequency,
        cooccurrence,
    }
}
