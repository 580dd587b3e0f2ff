use std::fmt;

use serde::{Deserialize, Serialize};

/// Recoverable problems a stage repaired on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// Model output was malformed, non-covering or overlapping and was repaired.
    DegenerateOutput { stage: String, detail: String },
    /// A causal link failed validation and was dropped.
    InvalidLink { episode: usize, detail: String },
    /// Perception found nothing relevant; the whole video is used instead.
    NoRelevantContent,
    /// More spans than frames; the shortest spans were dropped.
    BudgetTooSmall { dropped_spans: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DegenerateOutput { stage, detail } => write!(f, "degenerate {stage} output: {detail}"),
            Self::InvalidLink { episode, detail } => write!(f, "episode {episode}: dropped link ({detail})"),
            Self::NoRelevantContent => write!(f, "no query-relevant content; using the full video"),
            Self::BudgetTooSmall { dropped_spans } => {
                write!(f, "frame budget smaller than span count; dropped {dropped_spans} span(s)")
            }
        }
    }
}
