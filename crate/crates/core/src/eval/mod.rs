//! CHAIR and POPE metrics over decode outputs.

mod chair;
mod pope;
mod report;

pub use chair::{caption_scenes, chair_metrics, extract_objects, CaptionRecord, ChairReport, Mentions};
pub use pope::{answer_pope, pope_metrics, PopeAnswer, PopeReport};
pub use report::EvalReport;
