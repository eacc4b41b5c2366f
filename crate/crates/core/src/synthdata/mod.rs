//! Synthetic grounded scenes, prompts and object-probing question sets.
//!
//! Everything here is a pure function of its inputs and a seed. Scenes are
//! rendered into a fixed-size image span of reserved image tokens, one slot
//! per object followed by a background slot, closed by end-of-image tokens.

mod io;
mod lexicon;
mod pope;
mod prompt;
mod scenes;

pub use io::{read_jsonl, write_jsonl};
pub use lexicon::{LexObject, Lexicon, ObjectId, SpecialTokens};
pub use pope::{build_pope_questions, Answer, PopeQuestion, PopeSplit};
pub use prompt::{make_prompt, question_prompt, PromptTemplate};
pub use scenes::{corpus_stats, generate_scenes, ObjectStats, Scene, SceneParams};
