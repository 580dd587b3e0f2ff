//! Query-conditioned retrieval: find the transcript lines relevant to a
//! question, turn them into padded time spans, and plan which frames to
//! sample from those spans.

mod clip;
mod query;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use clip::{derive_clip, frame_plan, grab_command, image_refs, uniform_clip, ClipSpec, FrameGrab};
pub use query::{label_for, AnswerOption, Query};

use crate::backend::{extract_json, BackendError, ChatBackend, ChatRequest, Part, StagePayload, TemplateError, TemplateId, TemplateSet};
use crate::memory::{EpisodicMemory, MemoryView};
use crate::transcript::{render_lines, SpeechLine, Transcript};
use crate::warning::Warning;

pub(crate) const PERCEPTION_SYSTEM: &str = "You are the perception agent of a long-video question answering system. \
Locate the transcript lines relevant to the question and reply only in the requested format.";

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("memory was built from {memory} but the transcript is {transcript}")]
    SourceMismatch { memory: String, transcript: String },
    #[error("transcript has no lines")]
    EmptyTranscript,
    #[error("perception call failed: {0}")]
    Backend(#[source] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("video duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("frame budget must be at least 1")]
    ZeroFrameBudget,
    #[error("invalid span [{}, {}]", .0[0], .0[1])]
    InvalidSpan([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionParams {
    pub top_k: usize,
    pub pad_s: f64,
    pub merge_window_s: f64,
    pub max_frames: usize,
    /// Keep at most this many spans (the longest ones).
    pub max_spans: Option<usize>,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            top_k: 5,
            pad_s: 2.0,
            merge_window_s: 10.0,
            max_frames: 32,
            max_spans: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start_s: f64,
    pub end_s: f64,
    pub line_indices: Vec<usize>,
}

impl Span {
    pub fn interval(&self) -> [f64; 2] {
        [self.start_s, self.end_s]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionResult {
    pub spans: Vec<Span>,
    pub clip: ClipSpec,
    /// Lines lying inside some span (T*).
    pub selected_lines: Vec<SpeechLine>,
    /// True when nothing relevant was found and the whole video is used.
    pub fallback: bool,
    pub warnings: Vec<Warning>,
}

impl PerceptionResult {
    pub fn intervals(&self) -> Vec<[f64; 2]> {
        self.spans.iter().map(Span::interval).collect()
    }
}

/// Locates query-relevant lines, maps them to padded, merged spans and
/// derives the frame plan. Falls back to the full video when nothing matches.
pub fn perceive(
    query: &Query,
    transcript: &Transcript,
    memory: &EpisodicMemory,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    params: &PerceptionParams,
) -> Result<PerceptionResult, PerceptionError> {
    let digest = transcript.digest();
    if memory.source_digest != digest {
        return Err(PerceptionError::SourceMismatch {
            memory: memory.source_digest.clone(),
            transcript: digest,
        });
    }
    if transcript.is_empty() {
        return Err(PerceptionError::EmptyTranscript);
    }
    if params.max_frames == 0 {
        return Err(PerceptionError::ZeroFrameBudget);
    }

    let bindings = BTreeMap::from([
        ("memory", memory.render(MemoryView::Narrative)),
        ("transcript", render_lines(transcript.lines())),
        ("query", query.text.clone()),
        ("options", query.render_options()),
    ]);
    let prompt = templates.get(TemplateId::Perception).render(&bindings)?;
    let payload = StagePayload::Perceive {
        query: query.text.clone(),
        options: query.options.iter().map(|o| o.text.clone()).collect(),
        lines: transcript.lines().iter().map(|l| (l.index, l.text.clone())).collect(),
        top_k: params.top_k,
    };
    let request = ChatRequest::new(PERCEPTION_SYSTEM, vec![Part::text(prompt)]).with_payload(payload);
    let reply = backend.complete(&request).map_err(PerceptionError::Backend)?.text;

    let mut warnings = Vec::new();
    let hits = parse_hits(&reply, transcript, &mut warnings);
    let duration = transcript.effective_duration_s();
    if hits.is_empty() {
        warnings.push(Warning::NoRelevantContent);
        return fallback(transcript, duration, params, warnings);
    }
    let mut intervals = merge(hits, params.merge_window_s);
    for iv in &mut intervals {
        iv[0] = (iv[0] - params.pad_s).max(0.0);
        iv[1] = (iv[1] + params.pad_s).min(duration);
    }
    let mut intervals = merge(intervals, 0.0);
    if let Some(k) = params.max_spans.filter(|&k| k > 0 && k < intervals.len()) {
        let mut order: Vec<usize> = (0..intervals.len()).collect();
        order.sort_by(|&a, &b| {
            let (wa, wb) = (intervals[a][1] - intervals[a][0], intervals[b][1] - intervals[b][0]);
            wb.total_cmp(&wa).then(a.cmp(&b))
        });
        order.truncate(k);
        order.sort_unstable();
        intervals = order.into_iter().map(|i| intervals[i]).collect();
    }

    let (clip, w) = derive_clip(&intervals, params.max_frames, duration)?;
    warnings.extend(w);
    Ok(assemble(transcript, &clip.intervals, clip.clone(), false, warnings))
}

/// Hit intervals from `{"lines": [...]}` (line indices) or
/// `{"spans": [[s, e], ...]}` (seconds).
fn parse_hits(reply: &str, transcript: &Transcript, warnings: &mut Vec<Warning>) -> Vec<[f64; 2]> {
    let degenerate = |detail: String| Warning::DegenerateOutput {
        stage: "perception".into(),
        detail,
    };
    let Some(v) = extract_json(reply) else {
        warnings.push(degenerate("reply is not JSON".into()));
        return Vec::new();
    };
    let mut hits = Vec::new();
    if let Some(lines) = v.get("lines").and_then(Value::as_array) {
        for l in lines {
            match l.as_u64().and_then(|i| transcript.line(i as usize)) {
                Some(line) => hits.push([line.start_s, line.end_s]),
                None => warnings.push(degenerate(format!("line {l} does not exist"))),
            }
        }
    } else if let Some(spans) = v.get("spans").and_then(Value::as_array) {
        let d = transcript.effective_duration_s();
        for s in spans {
            let pair = s.as_array().filter(|a| a.len() == 2).and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?]));
            match pair {
                Some([a, b]) if a.is_finite() && b.is_finite() && a <= b && b >= 0.0 && a <= d => {
                    hits.push([a.max(0.0), b.min(d)])
                }
                _ => warnings.push(degenerate(format!("span {s} is not a valid [start, end] pair"))),
            }
        }
    } else {
        warnings.push(degenerate("no \"lines\" or \"spans\" field".into()));
    }
    hits
}

/// Sorts intervals and joins those separated by at most `window` seconds.
fn merge(mut intervals: Vec<[f64; 2]>, window: f64) -> Vec<[f64; 2]> {
    intervals.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut out: Vec<[f64; 2]> = Vec::new();
    for iv in intervals {
        match out.last_mut() {
            Some(last) if iv[0] - last[1] <= window => last[1] = last[1].max(iv[1]),
            _ => out.push(iv),
        }
    }
    out
}

fn fallback(
    transcript: &Transcript,
    duration: f64,
    params: &PerceptionParams,
    mut warnings: Vec<Warning>,
) -> Result<PerceptionResult, PerceptionError> {
    let clip = if duration > 0.0 {
        uniform_clip(duration, params.max_frames)?
    } else {
        let (clip, w) = derive_clip(&[[0.0, 0.0]], params.max_frames, 0.0)?;
        warnings.extend(w);
        clip
    };
    Ok(assemble(transcript, &[[0.0, duration]], clip, true, warnings))
}

fn assemble(
    transcript: &Transcript,
    intervals: &[[f64; 2]],
    clip: ClipSpec,
    fallback: bool,
    warnings: Vec<Warning>,
) -> PerceptionResult {
    let mut spans: Vec<Span> = intervals
        .iter()
        .map(|&[s, e]| Span {
            start_s: s,
            end_s: e,
            line_indices: Vec::new(),
        })
        .collect();
    let mut selected_lines = Vec::new();
    for line in transcript.lines() {
        if let Some(span) = spans
            .iter_mut()
            .find(|s| s.start_s <= line.start_s && line.end_s <= s.end_s)
        {
            span.line_indices.push(line.index);
            selected_lines.push(line.clone());
        }
    }
    PerceptionResult {
        spans,
        clip,
        selected_lines,
        fallback,
        warnings,
    }
}
