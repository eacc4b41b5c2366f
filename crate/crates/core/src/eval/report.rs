use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ChairReport, PopeReport};

/// CHAIR and/or POPE results with their backing counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chair: Option<ChairReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pope: Option<PopeReport>,
}

impl EvalReport {
    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        if let Some(c) = &self.chair {
            let _ = writeln!(s, "chair_s={}", c.chair_s);
            let _ = writeln!(s, "chair_i={}", c.chair_i);
            let _ = writeln!(s, "chair.captions={}", c.captions);
            let _ = writeln!(s, "chair.sentences={}", c.sentences);
            let _ = writeln!(s, "chair.hallucinated_sentences={}", c.hallucinated_sentences);
            let _ = writeln!(s, "chair.mentioned_objects={}", c.mentioned_objects);
            let _ = writeln!(s, "chair.hallucinated_objects={}", c.hallucinated_objects);
            let _ = writeln!(s, "chair.no_mentions={}", c.no_mentions);
        }
        if let Some(p) = &self.pope {
            let _ = writeln!(s, "pope.accuracy={}", p.accuracy);
            let _ = writeln!(s, "pope.precision={}", p.precision);
            let _ = writeln!(s, "pope.recall={}", p.recall);
            let _ = writeln!(s, "pope.f1={}", p.f1);
            let _ = writeln!(s, "pope.yes_ratio={}", p.yes_ratio);
            let _ = writeln!(s, "pope.tp={}", p.tp);
            let _ = writeln!(s, "pope.fp={}", p.fp);
            let _ = writeln!(s, "pope.tn={}", p.tn);
            let _ = writeln!(s, "pope.fn={}", p.fn_);
            let _ = writeln!(s, "pope.invalid={}", p.invalid);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
