use serde::{Deserialize, Serialize};

use super::{Lexicon, ObjectId, Scene};
use crate::error::{Error, Result};
use crate::model::{MultimodalSequence, TokenId};

/// Fixed prompt layout: `system ++ image ++ instruction`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: Vec<TokenId>,
    pub image_budget: usize,
    pub caption_instruction: Vec<TokenId>,
    /// Question tokens preceding the queried object's word.
    pub question_prefix: Vec<TokenId>,
}

impl PromptTemplate {
    /// One system token, an 8-slot image, a three-token "describe"
    /// instruction and a one-token question prefix.
    pub fn standard(lexicon: &Lexicon) -> Self {
        let sp = lexicon.specials();
        Self {
            system: vec![sp.system],
            image_budget: 8,
            caption_instruction: sp.describe.clone(),
            question_prefix: vec![sp.ask],
        }
    }

    pub fn caption_prompt_len(&self) -> usize {
        self.system.len() + self.image_budget + self.caption_instruction.len()
    }

    pub fn question_prompt_len(&self) -> usize {
        self.system.len() + self.image_budget + self.question_prefix.len() + 1
    }
}

/// Lays out `scene` under `template` with the given instruction tokens.
pub fn make_prompt(
    scene: &Scene,
    instruction: &[TokenId],
    template: &PromptTemplate,
    max_seq_len: usize,
) -> Result<MultimodalSequence> {
    if scene.image.len() != template.image_budget {
        return Err(Error::InvalidSequence(format!(
            "scene {} renders {} image tokens, template expects {}",
            scene.scene_id,
            scene.image.len(),
            template.image_budget
        )));
    }
    let len = template.system.len() + scene.image.len() + instruction.len();
    if len > max_seq_len {
        return Err(Error::SequenceOverflow { len, max: max_seq_len });
    }
    Ok(MultimodalSequence::new(&template.system, &scene.image, instruction))
}

/// "Is there a <object> in the image?" prompt, ending in the object's word.
pub fn question_prompt(
    scene: &Scene,
    object: ObjectId,
    lexicon: &Lexicon,
    template: &PromptTemplate,
    max_seq_len: usize,
) -> Result<MultimodalSequence> {
    let mut instruction = template.question_prefix.clone();
    instruction.push(lexicon.object(object).token);
    make_prompt(scene, &instruction, template, max_seq_len)
}
