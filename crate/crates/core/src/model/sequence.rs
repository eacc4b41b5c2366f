use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::TokenId;
use crate::error::{Error, Result};

/// Role of a position in a multimodal prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Image,
    Instruction,
    Generated,
}

/// Token stream with one contiguous image span and per-position role tags.
///
/// Generated positions always form a suffix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultimodalSequence {
    tokens: Vec<TokenId>,
    roles: Vec<Role>,
    image_span: Range<usize>,
}

impl MultimodalSequence {
    /// `system ++ image ++ instruction`.
    pub fn new(system: &[TokenId], image: &[TokenId], instruction: &[TokenId]) -> Self {
        let mut tokens = Vec::with_capacity(system.len() + image.len() + instruction.len());
        let mut roles = Vec::with_capacity(tokens.capacity());
        for (part, role) in [
            (system, Role::System),
            (image, Role::Image),
            (instruction, Role::Instruction),
        ] {
            tokens.extend_from_slice(part);
            roles.extend(std::iter::repeat_n(role, part.len()));
        }
        let start = system.len();
        Self {
            tokens,
            roles,
            image_span: start..start + image.len(),
        }
    }

    /// Builds a sequence from explicit tags, checking the layout invariants.
    pub fn from_parts(tokens: Vec<TokenId>, roles: Vec<Role>) -> Result<Self> {
        if tokens.len() != roles.len() {
            return Err(Error::InvalidSequence(format!(
                "{} tokens but {} role tags",
                tokens.len(),
                roles.len()
            )));
        }
        let first_image = roles.iter().position(|r| *r == Role::Image);
        let image_span = match first_image {
            Some(start) => {
                let end = roles[start..]
                    .iter()
                    .position(|r| *r != Role::Image)
                    .map_or(roles.len(), |off| start + off);
                if roles[end..].contains(&Role::Image) {
                    return Err(Error::InvalidSequence("image positions are not contiguous".into()));
                }
                start..end
            }
            None => {
                let at = roles
                    .iter()
                    .position(|r| *r == Role::Generated)
                    .unwrap_or(roles.len());
                at..at
            }
        };
        if let Some(g) = roles.iter().position(|r| *r == Role::Generated) {
            if roles[g..].iter().any(|r| *r != Role::Generated) {
                return Err(Error::InvalidSequence("generated positions must be a suffix".into()));
            }
        }
        Ok(Self {
            tokens,
            roles,
            image_span,
        })
    }

    pub fn push_generated(&mut self, token: TokenId) {
        self.tokens.push(token);
        self.roles.push(Role::Generated);
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn image_span(&self) -> Range<usize> {
        self.image_span.clone()
    }

    pub fn image_tokens(&self) -> &[TokenId] {
        &self.tokens[self.image_span.clone()]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn prompt_len(&self) -> usize {
        self.roles
            .iter()
            .position(|r| *r == Role::Generated)
            .unwrap_or(self.roles.len())
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len()..]
    }
}
