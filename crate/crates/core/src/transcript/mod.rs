//! Time-aligned transcripts: subtitle files (SRT, WebVTT) and frame-caption
//! documents, normalized into one ordered list of [`SpeechLine`]s.

mod caption;
mod cue;
mod srt;
mod vtt;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use caption::parse_caption_doc;
pub use srt::{parse_srt, to_srt};
pub use vtt::{parse_vtt, to_vtt};

use crate::text;

#[derive(Debug, Error, PartialEq)]
pub enum TranscriptError {
    #[error("file contains no cues")]
    EmptyFile,
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("missing WEBVTT header")]
    MissingHeader,
    #[error("malformed cue #{ordinal}: {reason}")]
    MalformedCue { ordinal: usize, reason: String },
    #[error("malformed caption record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {index} ends at {end_s}s, past the video duration of {duration_s}s")]
    BeyondDuration {
        index: usize,
        end_s: f64,
        duration_s: f64,
    },
    #[error("video duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Subtitle,
    Caption,
}

/// One time-aligned unit of text. Captions are zero-width (`start_s == end_s`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechLine {
    /// 1-based position in the transcript after sorting.
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

impl SpeechLine {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// A cue as read from a file, before ordering and indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCue {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

/// Ordered, immutable transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    lines: Vec<SpeechLine>,
    source_kind: SourceKind,
    video_duration_s: Option<f64>,
}

impl Transcript {
    /// Orders cues by start time (file order breaks ties) and numbers them from 1.
    pub fn from_cues(cues: Vec<RawCue>, source_kind: SourceKind) -> Self {
        let mut cues: Vec<(usize, RawCue)> = cues.into_iter().enumerate().collect();
        cues.sort_by(|(ia, a), (ib, b)| a.start_s.total_cmp(&b.start_s).then(ia.cmp(ib)));
        let lines = cues
            .into_iter()
            .enumerate()
            .map(|(i, (_, c))| SpeechLine {
                index: i + 1,
                start_s: c.start_s,
                end_s: c.end_s,
                text: c.text,
            })
            .collect();
        Self {
            lines,
            source_kind,
            video_duration_s: None,
        }
    }

    /// Attaches the known video duration; every line must end within it.
    pub fn with_duration(mut self, duration_s: f64) -> Result<Self, TranscriptError> {
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(TranscriptError::InvalidDuration(duration_s));
        }
        if let Some(line) = self.lines.iter().find(|l| l.end_s > duration_s) {
            return Err(TranscriptError::BeyondDuration {
                index: line.index,
                end_s: line.end_s,
                duration_s,
            });
        }
        self.video_duration_s = Some(duration_s);
        Ok(self)
    }

    pub fn lines(&self) -> &[SpeechLine] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn source_kind(&self) -> SourceKind {
        self.source_kind
    }

    pub fn video_duration_s(&self) -> Option<f64> {
        self.video_duration_s
    }

    /// Known duration, or the latest line end when the duration is unknown.
    pub fn effective_duration_s(&self) -> f64 {
        self.video_duration_s.unwrap_or_else(|| {
            self.lines.iter().map(|l| l.end_s).fold(0.0, f64::max)
        })
    }

    /// Line by 1-based index.
    pub fn line(&self, index: usize) -> Option<&SpeechLine> {
        index.checked_sub(1).and_then(|i| self.lines.get(i))
    }

    /// Lines `first..=last` (1-based, inclusive).
    pub fn range(&self, first: usize, last: usize) -> &[SpeechLine] {
        &self.lines[first - 1..last]
    }

    /// Token count of the transcript body (line texts only).
    pub fn token_count(&self) -> TokenCount {
        TokenCount::whitespace(self.lines.iter().map(|l| text::whitespace_tokens(&l.text)).sum())
    }

    /// Content hash over source kind and lines; duration is not part of it.
    pub fn digest(&self) -> String {
        let mut canon = String::new();
        let _ = writeln!(canon, "{:?}", self.source_kind);
        for l in &self.lines {
            let _ = writeln!(canon, "{}\t{:?}\t{:?}\t{}", l.index, l.start_s, l.end_s, l.text);
        }
        format!("sha256:{}", hex::encode(Sha256::digest(canon.as_bytes())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMethod {
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub count: usize,
    pub method: TokenMethod,
}

impl TokenCount {
    pub fn whitespace(count: usize) -> Self {
        Self {
            count,
            method: TokenMethod::Whitespace,
        }
    }
}

/// Prompt form of transcript lines: `[index] start–end text`, one per line.
pub fn render_lines(lines: &[SpeechLine]) -> String {
    let mut out = String::new();
    for l in lines {
        let _ = writeln!(out, "[{}] {:.1}–{:.1} {}", l.index, l.start_s, l.end_s, l.text);
    }
    out
}

/// Counts maximal whitespace-separated non-empty segments.
pub fn count_tokens(text: &str) -> TokenCount {
    TokenCount::whitespace(text::whitespace_tokens(text))
}

/// Reads a subtitle or caption file, picking the parser from the extension
/// (`.srt`, `.vtt`, `.jsonl`/`.json`) or, failing that, from the content.
pub fn load_transcript(path: &Path) -> Result<Transcript, TranscriptError> {
    let bytes = std::fs::read(path).map_err(|e| TranscriptError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("srt") => parse_srt(&bytes),
        Some("vtt") => parse_vtt(&bytes),
        Some("jsonl") | Some("json") => parse_caption_doc(&bytes),
        _ => {
            let head = cue::decode(&bytes)?;
            let head = head.trim_start();
            if head.starts_with("WEBVTT") {
                parse_vtt(&bytes)
            } else if head.starts_with('{') {
                parse_caption_doc(&bytes)
            } else {
                parse_srt(&bytes)
            }
        }
    }
}
