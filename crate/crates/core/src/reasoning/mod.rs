//! The action stage: compose the evidence named by an [`EvidenceConfig`],
//! ask the reasoner, and read back the chosen option and its evidence.

mod config;
mod parse;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ConfigError, EvidenceConfig, MemoryEvidence, TextEvidence, VisionEvidence, ABLATION_ROWS};
pub use parse::{parse_answer, ParsedAnswer};

use crate::backend::{
    BackendError, ChatBackend, ChatRequest, ImageRef, ImageSource, Part, StagePayload, TemplateError, TemplateId,
    TemplateSet,
};
use crate::memory::{EpisodicMemory, MemoryView};
use crate::perception::{frame_plan, image_refs, uniform_clip, ClipSpec, PerceptionError, PerceptionResult, Query};
use crate::transcript::{render_lines, SpeechLine, Transcript};

pub const REASONER_SYSTEM: &str = "You are the reasoning agent of a long-video question answering system. \
Answer the multiple-choice question from the evidence provided.";

pub const MEMORY_SCHEMATIC_MARKER: &str = "### EPISODIC MEMORY (schematic)";
pub const MEMORY_NARRATIVE_MARKER: &str = "### EPISODIC MEMORY (schematic+narrative)";
pub const TRANSCRIPT_FULL_MARKER: &str = "### TRANSCRIPT (full)";
pub const TRANSCRIPT_QR_MARKER: &str = "### TRANSCRIPT (query-related)";
pub const FRAMES_MARKER: &str = "### VIDEO FRAMES";

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("evidence config {0} needs a perception result")]
    MissingPerception(String),
    #[error("{frames} frames exceed the budget of {max}")]
    FrameBudgetExceeded { frames: usize, max: usize },
    #[error("cannot read frame {path}: {message}")]
    FrameUnavailable { path: String, message: String },
    #[error("reply names no valid option: {response:?}")]
    UnparseableAnswer { response: String },
    #[error("reasoner call failed: {0}")]
    Backend(#[source] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Clip(#[from] PerceptionError),
}

/// Where frame images live and how they are attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameOptions {
    pub max_frames: usize,
    pub frame_dir: PathBuf,
    /// Embed image bytes as data URIs; otherwise send `file://` URIs.
    pub inline: bool,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self {
            max_frames: 32,
            frame_dir: PathBuf::from("frames"),
            inline: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub answer_id: String,
    pub evidence: String,
    pub raw_response: String,
    pub config: EvidenceConfig,
    pub token_usage: TokenUsage,
}

/// Builds the reasoner request. Parts run memory → transcript → frames →
/// question, with adjacent text blocks joined into one part.
pub fn assemble_evidence(
    config: &EvidenceConfig,
    query: &Query,
    transcript: &Transcript,
    memory: &EpisodicMemory,
    perception: Option<&PerceptionResult>,
    templates: &TemplateSet,
    frames: &FrameOptions,
) -> Result<ChatRequest, ReasoningError> {
    let perception = match (config.needs_perception(), perception) {
        (true, None) => return Err(ReasoningError::MissingPerception(config.to_string())),
        (_, p) => p,
    };
    let mut blocks: Vec<Part> = Vec::new();
    let push_text = |blocks: &mut Vec<Part>, text: String| match blocks.last_mut() {
        Some(Part::Text { text: prev }) => {
            prev.push_str("\n\n");
            prev.push_str(&text);
        }
        _ => blocks.push(Part::text(text)),
    };

    let summaries: Vec<String> = match config.memory {
        MemoryEvidence::None => Vec::new(),
        m => {
            let (marker, view) = if m == MemoryEvidence::Schematic {
                (MEMORY_SCHEMATIC_MARKER, MemoryView::Schematic)
            } else {
                (MEMORY_NARRATIVE_MARKER, MemoryView::Narrative)
            };
            push_text(&mut blocks, format!("{marker}\n{}", memory.render(view).trim_end()));
            memory.episodes.iter().map(|e| e.schematic_summary.clone()).collect()
        }
    };

    let lines: &[SpeechLine] = match (config.text, perception) {
        (TextEvidence::None, _) => &[],
        (TextEvidence::FullTranscript, _) => transcript.lines(),
        (TextEvidence::QrTranscript, Some(p)) => &p.selected_lines,
        (TextEvidence::QrTranscript, None) => unreachable!("checked above"),
    };
    if config.text != TextEvidence::None {
        let marker = if config.text == TextEvidence::FullTranscript {
            TRANSCRIPT_FULL_MARKER
        } else {
            TRANSCRIPT_QR_MARKER
        };
        let body = if lines.is_empty() {
            "(no lines)".to_string()
        } else {
            render_lines(lines).trim_end().to_string()
        };
        push_text(&mut blocks, format!("{marker}\n{body}"));
    }

    let clip: Option<ClipSpec> = match (config.vision, perception) {
        (VisionEvidence::None, _) => None,
        (VisionEvidence::Uniform, _) => Some(uniform_clip(transcript.effective_duration_s(), frames.max_frames)?),
        (VisionEvidence::QrSegment, Some(p)) => Some(p.clip.clone()),
        (VisionEvidence::QrSegment, None) => unreachable!("checked above"),
    };
    if let Some(clip) = clip {
        if clip.len() > frames.max_frames {
            return Err(ReasoningError::FrameBudgetExceeded {
                frames: clip.len(),
                max: frames.max_frames,
            });
        }
        let how = if config.vision == VisionEvidence::Uniform {
            "sampled uniformly over the whole video"
        } else {
            "sampled from the query-related segments"
        };
        push_text(&mut blocks, format!("{FRAMES_MARKER}\n{} frames {how}, in temporal order.", clip.len()));
        let mut refs = image_refs(&frame_plan(&clip, &frames.frame_dir));
        refs.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
        for image in refs {
            let image = if frames.inline { inline(image)? } else { image };
            blocks.push(Part::Image { image });
        }
    }

    let bindings = BTreeMap::from([("query", query.text.clone()), ("options", query.render_options())]);
    let question = templates.get(TemplateId::Action).render(&bindings)?;
    push_text(&mut blocks, question);

    let payload = StagePayload::Act {
        options: query.options.clone(),
        transcript_lines: lines.iter().map(|l| l.text.clone()).collect(),
        memory_summaries: summaries,
    };
    Ok(ChatRequest::new(REASONER_SYSTEM, blocks).with_payload(payload))
}

fn inline(image: ImageRef) -> Result<ImageRef, ReasoningError> {
    let ImageSource::Uri { uri } = &image.source else {
        return Ok(image);
    };
    let path = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
    let bytes = std::fs::read(path).map_err(|e| ReasoningError::FrameUnavailable {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        _ => "image/jpeg",
    };
    Ok(ImageRef {
        source: ImageSource::Inline {
            mime: mime.into(),
            bytes,
        },
        timestamp_s: image.timestamp_s,
    })
}

/// Sends the assembled request and parses the reply.
pub fn act(
    query: &Query,
    request: &ChatRequest,
    config: &EvidenceConfig,
    backend: &dyn ChatBackend,
) -> Result<ActionResult, ReasoningError> {
    let resp = backend.complete(request).map_err(ReasoningError::Backend)?;
    let parsed = parse_answer(&resp.text, &query.options)?;
    Ok(ActionResult {
        answer_id: parsed.answer_id,
        evidence: parsed.evidence,
        raw_response: resp.text,
        config: *config,
        token_usage: TokenUsage {
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
        },
    })
}

/// Block markers present in a rendered request, in order of appearance.
pub fn block_markers(rendered: &str) -> Vec<&'static str> {
    let all = [
        MEMORY_SCHEMATIC_MARKER,
        MEMORY_NARRATIVE_MARKER,
        TRANSCRIPT_FULL_MARKER,
        TRANSCRIPT_QR_MARKER,
        FRAMES_MARKER,
    ];
    let mut found: Vec<(usize, &'static str)> = all
        .iter()
        .flat_map(|m| rendered.match_indices(m).map(move |(i, _)| (i, *m)))
        .collect();
    found.sort_unstable();
    found.into_iter().map(|(_, m)| m).collect()
}
