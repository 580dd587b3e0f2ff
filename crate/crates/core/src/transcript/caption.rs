use serde::Deserialize;

use super::cue::decode;
use super::{RawCue, SourceKind, Transcript, TranscriptError};
use crate::text::normalize_space;

#[derive(Deserialize)]
struct CaptionRecord {
    t: f64,
    caption: String,
}

/// Parses a JSON-lines caption document (`{"t": seconds, "caption": text}`
/// per sampled frame). Each record becomes a zero-width line at `t`.
pub fn parse_caption_doc(bytes: &[u8]) -> Result<Transcript, TranscriptError> {
    let content = decode(bytes)?;
    let mut cues = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| TranscriptError::MalformedRecord { line: i + 1, reason };
        let rec: CaptionRecord = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
        if !(rec.t.is_finite() && rec.t >= 0.0) {
            return Err(bad(format!("timestamp must be a non-negative number, got {}", rec.t)));
        }
        let text = normalize_space(&rec.caption);
        if text.is_empty() {
            return Err(bad("caption is empty".into()));
        }
        cues.push(RawCue {
            start_s: rec.t,
            end_s: rec.t,
            text,
        });
    }
    if cues.is_empty() {
        return Err(TranscriptError::EmptyFile);
    }
    Ok(Transcript::from_cues(cues, SourceKind::Caption))
}
