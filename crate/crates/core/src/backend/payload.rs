use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineTiming {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionText {
    pub label: String,
    pub text: String,
}

/// Stage inputs in structured form, one variant per prompt template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StagePayload {
    Segment {
        lines: Vec<LineTiming>,
        gap_threshold_s: f64,
        max_lines: usize,
    },
    Abstract {
        episode_id: usize,
        text: String,
        summary_budget: usize,
    },
    Link {
        summaries: Vec<String>,
        conflict_lexicon: Vec<String>,
        refers_back_min_overlap: usize,
    },
    Perceive {
        query: String,
        options: Vec<String>,
        /// `(index, text)` for every transcript line.
        lines: Vec<(usize, String)>,
        top_k: usize,
    },
    Act {
        options: Vec<OptionText>,
        transcript_lines: Vec<String>,
        memory_summaries: Vec<String>,
    },
    Reflect {
        query: String,
        answer_id: String,
        answer_text: String,
        evidence: String,
        summary_budget: usize,
    },
}
