use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;

/// Index of an object inside a [`Lexicon`].
pub type ObjectId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexObject {
    pub name: String,
    /// Canonical text token.
    pub token: TokenId,
    pub synonyms: Vec<TokenId>,
    /// Reserved image token rendered into the image span.
    pub image_token: TokenId,
}

/// Non-object vocabulary entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub eos: TokenId,
    pub separator: TokenId,
    pub yes: TokenId,
    pub no: TokenId,
    pub ask: TokenId,
    pub system: TokenId,
    pub describe: Vec<TokenId>,
    pub image_background: TokenId,
    pub image_end: TokenId,
    pub image_noise: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    objects: Vec<LexObject>,
    specials: SpecialTokens,
    #[serde(skip)]
    text_index: HashMap<TokenId, ObjectId>,
    #[serde(skip)]
    image_index: HashMap<TokenId, ObjectId>,
}

const OBJECT_NAMES: &[&str] = &[
    "person", "dog", "table", "car", "cup", "chair", "bottle", "cat", "bicycle", "book",
    "clock", "bird", "horse", "bench", "umbrella", "truck", "bowl", "kite", "sink", "laptop",
];

impl Lexicon {
    pub fn new(objects: Vec<LexObject>, specials: SpecialTokens) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::InvalidConfig("lexicon needs at least one object".into()));
        }
        let mut seen = HashSet::new();
        let special_ids = [
            specials.eos,
            specials.separator,
            specials.yes,
            specials.no,
            specials.ask,
            specials.system,
            specials.image_background,
            specials.image_end,
            specials.image_noise,
        ];
        let all = special_ids
            .iter()
            .chain(&specials.describe)
            .chain(objects.iter().flat_map(|o| {
                std::iter::once(&o.token)
                    .chain(&o.synonyms)
                    .chain(std::iter::once(&o.image_token))
            }));
        for id in all {
            if !seen.insert(*id) {
                return Err(Error::InvalidConfig(format!("token id {id} used twice in lexicon")));
            }
        }
        let mut lex = Self {
            objects,
            specials,
            text_index: HashMap::new(),
            image_index: HashMap::new(),
        };
        lex.reindex();
        Ok(lex)
    }

    fn reindex(&mut self) {
        self.text_index.clear();
        self.image_index.clear();
        for (i, o) in self.objects.iter().enumerate() {
            self.text_index.insert(o.token, i);
            for s in &o.synonyms {
                self.text_index.insert(*s, i);
            }
            self.image_index.insert(o.image_token, i);
        }
    }

    /// Default layout with `n_objects` (at most 20) objects, one synonym each.
    ///
    /// Ids: 0 eos, 1 separator, 2 yes, 3 no, 4 ask, 5 system, 6..=8 describe,
    /// 9 image background, 10 image end, 11 image noise, then per object a
    /// canonical word, a synonym and an image token in three blocks.
    pub fn standard(n_objects: usize) -> Result<Self> {
        if n_objects == 0 || n_objects > OBJECT_NAMES.len() {
            return Err(Error::InvalidConfig(format!(
                "standard lexicon supports 1..={} objects",
                OBJECT_NAMES.len()
            )));
        }
        let base = 12;
        let n = n_objects as TokenId;
        let objects = (0..n)
            .map(|i| LexObject {
                name: OBJECT_NAMES[i as usize].to_string(),
                token: base + i,
                synonyms: vec![base + n + i],
                image_token: base + 2 * n + i,
            })
            .collect();
        let specials = SpecialTokens {
            eos: 0,
            separator: 1,
            yes: 2,
            no: 3,
            ask: 4,
            system: 5,
            describe: vec![6, 7, 8],
            image_background: 9,
            image_end: 10,
            image_noise: 11,
        };
        Self::new(objects, specials)
    }

    pub fn objects(&self) -> &[LexObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn object(&self, id: ObjectId) -> &LexObject {
        &self.objects[id]
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    /// Canonical or synonym text token to object.
    pub fn object_of_text(&self, token: TokenId) -> Option<ObjectId> {
        self.text_index.get(&token).copied()
    }

    pub fn object_of_image(&self, token: TokenId) -> Option<ObjectId> {
        self.image_index.get(&token).copied()
    }

    pub fn find(&self, name: &str) -> Option<ObjectId> {
        self.objects.iter().position(|o| o.name == name)
    }

    /// One past the largest token id in use.
    pub fn vocab_size(&self) -> usize {
        let s = &self.specials;
        let max_special = [
            s.eos,
            s.separator,
            s.yes,
            s.no,
            s.ask,
            s.system,
            s.image_background,
            s.image_end,
            s.image_noise,
        ]
        .into_iter()
        .chain(s.describe.iter().copied())
        .max()
        .unwrap_or(0);
        let max_obj = self
            .objects
            .iter()
            .flat_map(|o| std::iter::once(o.token).chain(o.synonyms.iter().copied()).chain([o.image_token]))
            .max()
            .unwrap_or(0);
        max_special.max(max_obj) as usize + 1
    }

    /// Restores lookup tables after deserialization.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Lexicon =
            serde_json::from_str(text).map_err(|e| Error::parse("lexicon", 0, e.to_string()))?;
        Self::new(raw.objects, raw.specials)
    }
}
