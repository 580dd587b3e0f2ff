//! Episodic memory: event-level episodes built from a transcript before any
//! query arrives, each with a schematic summary and a narrative layer (role
//! and links to earlier episodes), plus reflection notes appended per query.

mod build;
mod reflect;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{abstract_schema, build_memory, link_narrative, segment_events, BuildOutput, DraftEpisode, Narrative, Schema};
pub use reflect::{reflect, reflection_target};

use crate::backend::{BackendError, TemplateError};
use crate::text::whitespace_tokens;
use crate::transcript::{SourceKind, Transcript};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("transcript has no lines")]
    EmptyTranscript,
    #[error("{stage} call failed: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("backend returned an empty summary for episode {episode}")]
    EmptySummary { episode: usize },
    #[error("reflection needs non-empty evidence")]
    EmptyEvidence,
    #[error("answer {0} is not one of the query options")]
    UnknownAnswer(String),
    #[error("memory was built from {memory} but the transcript is {transcript}")]
    DigestMismatch { memory: String, transcript: String },
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
}

impl MemoryError {
    pub(crate) fn violation(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::SchemaViolation {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrativeRole {
    Introduction,
    Development,
    Conflict,
    Resolution,
    Other,
}

impl NarrativeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Introduction => "introduction",
            Self::Development => "development",
            Self::Conflict => "conflict",
            Self::Resolution => "resolution",
            Self::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "introduction" => Self::Introduction,
            "development" => Self::Development,
            "conflict" => Self::Conflict,
            "resolution" => Self::Resolution,
            "other" => Self::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Precedes,
    Causes,
    RefersBack,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Precedes => "precedes",
            Self::Causes => "causes",
            Self::RefersBack => "refers_back",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "precedes" => Self::Precedes,
            "causes" => Self::Causes,
            "refers_back" => Self::RefersBack,
            _ => return None,
        })
    }
}

/// Link to an earlier episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalLink {
    pub target_id: usize,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionNote {
    pub query: String,
    pub answer_id: String,
    pub summary: String,
    pub created_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: usize,
    /// `[start_s, end_s]`
    pub span: [f64; 2],
    /// `[first_index, last_index]`, 1-based and inclusive.
    pub line_range: [usize; 2],
    pub schematic_summary: String,
    pub entities: Vec<String>,
    pub narrative_role: NarrativeRole,
    pub causal_links: Vec<CausalLink>,
    pub reflections: Vec<ReflectionNote>,
}

impl Episode {
    pub fn start_s(&self) -> f64 {
        self.span[0]
    }

    pub fn end_s(&self) -> f64 {
        self.span[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicMemory {
    pub version: u32,
    pub source_digest: String,
    pub source_kind: SourceKind,
    pub episodes: Vec<Episode>,
}

/// How much of an episode a prompt shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryView {
    /// Summary only.
    Schematic,
    /// Summary plus narrative role and causal links.
    Narrative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryParams {
    pub gap_threshold_s: f64,
    pub max_lines: usize,
    pub summary_budget: usize,
    pub conflict_lexicon: Vec<String>,
    pub refers_back_min_overlap: usize,
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            gap_threshold_s: 5.0,
            max_lines: 20,
            summary_budget: 30,
            conflict_lexicon: ["but", "however", "problem", "fail", "wrong"]
                .map(String::from)
                .to_vec(),
            refers_back_min_overlap: 3,
        }
    }
}

impl EpisodicMemory {
    /// Number of transcript lines covered (the last `line_range` end).
    pub fn line_count(&self) -> usize {
        self.episodes.last().map_or(0, |e| e.line_range[1])
    }

    /// Checks every structural invariant of the memory file.
    pub fn validate(&self) -> Result<(), MemoryError> {
        if self.version < 1 {
            return Err(MemoryError::violation("version", "must be at least 1"));
        }
        if self.source_digest.trim().is_empty() {
            return Err(MemoryError::violation("source_digest", "must not be empty"));
        }
        if self.episodes.is_empty() {
            return Err(MemoryError::violation("episodes", "must not be empty"));
        }
        let mut next_line = 1;
        for (pos, ep) in self.episodes.iter().enumerate() {
            let at = |field: &str| format!("episodes[{pos}].{field}");
            if ep.id != pos {
                return Err(MemoryError::violation(at("id"), format!("expected {pos}, found {}", ep.id)));
            }
            let [s, e] = ep.span;
            if !(s.is_finite() && e.is_finite() && 0.0 <= s && s <= e) {
                return Err(MemoryError::violation(at("span"), format!("invalid interval [{s}, {e}]")));
            }
            let [a, b] = ep.line_range;
            if a != next_line || b < a {
                return Err(MemoryError::violation(
                    at("line_range"),
                    format!("[{a}, {b}] breaks the partition (next line is {next_line})"),
                ));
            }
            next_line = b + 1;
            if ep.schematic_summary.trim().is_empty() {
                return Err(MemoryError::violation(at("schematic_summary"), "must not be empty"));
            }
            for (k, link) in ep.causal_links.iter().enumerate() {
                if link.target_id >= ep.id {
                    return Err(MemoryError::violation(
                        at(&format!("causal_links[{k}].target_id")),
                        format!("{} does not point to an earlier episode", link.target_id),
                    ));
                }
            }
            let mut last_version = 1;
            for (k, note) in ep.reflections.iter().enumerate() {
                let path = at(&format!("reflections[{k}]"));
                if note.summary.trim().is_empty() {
                    return Err(MemoryError::violation(path, "empty summary"));
                }
                if note.created_version <= last_version || note.created_version > self.version {
                    return Err(MemoryError::violation(
                        path,
                        format!(
                            "created_version {} out of order or newer than memory version {}",
                            note.created_version, self.version
                        ),
                    ));
                }
                last_version = note.created_version;
            }
        }
        Ok(())
    }

    /// The memory must come from this transcript and cover all of its lines.
    pub fn check_source(&self, transcript: &Transcript) -> Result<(), MemoryError> {
        let digest = transcript.digest();
        if self.source_digest != digest {
            return Err(MemoryError::DigestMismatch {
                memory: self.source_digest.clone(),
                transcript: digest,
            });
        }
        if self.line_count() != transcript.len() {
            return Err(MemoryError::violation(
                "episodes",
                format!("covers {} lines, transcript has {}", self.line_count(), transcript.len()),
            ));
        }
        Ok(())
    }

    /// Prompt serialization, one `「…」` line per episode followed by its notes.
    pub fn render(&self, view: MemoryView) -> String {
        let mut out = String::new();
        for ep in &self.episodes {
            out.push_str(&render_episode(ep, view));
            out.push('\n');
        }
        out
    }

    /// Whitespace tokens of the narrative serialization.
    pub fn token_count(&self) -> usize {
        whitespace_tokens(&self.render(MemoryView::Narrative))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("memory serializes");
        s.push('\n');
        s
    }
}

pub fn render_episode(ep: &Episode, view: MemoryView) -> String {
    let mut out = format!("「{} | {:.1}–{:.1} | ", ep.id, ep.span[0], ep.span[1]);
    match view {
        MemoryView::Schematic => {
            let _ = write!(out, "{}」", ep.schematic_summary);
        }
        MemoryView::Narrative => {
            let links = if ep.causal_links.is_empty() {
                "-".to_string()
            } else {
                ep.causal_links
                    .iter()
                    .map(|l| format!("{}→{}", l.relation.as_str(), l.target_id))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            let _ = write!(out, "{} | {} | {links}」", ep.narrative_role.as_str(), ep.schematic_summary);
        }
    }
    for note in &ep.reflections {
        let _ = write!(out, "\n  ↳ note v{}: {}", note.created_version, note.summary);
    }
    out
}

pub fn save_memory(memory: &EpisodicMemory) -> Vec<u8> {
    memory.to_json().into_bytes()
}

/// Parses and validates a memory file.
pub fn load_memory(bytes: &[u8]) -> Result<EpisodicMemory, MemoryError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let memory: EpisodicMemory = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        MemoryError::violation(path, e.into_inner().to_string())
    })?;
    memory.validate()?;
    Ok(memory)
}
