use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;

use super::cue::{blocks, clean_text, decode, escape_text, format_timestamp, seconds};
use super::{RawCue, SourceKind, Transcript, TranscriptError};

static TIMING: LazyLock<Regex> = LazyLock::new(|| {
    let ts = r"(?:(\d+):)?(\d{2}):(\d{2})\.(\d{3})";
    Regex::new(&format!(r"^\s*{ts}\s*-->\s*{ts}(?:\s.*)?$")).expect("vtt timing pattern")
});

/// Parses a WebVTT file. NOTE, STYLE and REGION blocks are skipped.
pub fn parse_vtt(bytes: &[u8]) -> Result<Transcript, TranscriptError> {
    let content = decode(bytes)?;
    let first = content.lines().next().unwrap_or("");
    let rest = first.strip_prefix("WEBVTT").ok_or(TranscriptError::MissingHeader)?;
    if !(rest.is_empty() || rest.starts_with([' ', '\t'])) {
        return Err(TranscriptError::MissingHeader);
    }

    let mut cues = Vec::new();
    let mut ordinal = 0;
    for block in blocks(&content).iter().skip(1) {
        if ["NOTE", "STYLE", "REGION"].iter().any(|kw| is_keyword_line(block[0], kw)) {
            continue;
        }
        ordinal += 1;
        let timing_at = match block.iter().position(|l| l.contains("-->")) {
            Some(i @ (0 | 1)) => i,
            Some(_) => {
                return Err(malformed(ordinal, "unexpected text before the timing line"))
            }
            None => return Err(malformed(ordinal, "missing timing line")),
        };
        let (start_s, end_s) = parse_timing(block[timing_at]).map_err(|r| malformed(ordinal, r))?;
        let text = clean_text(&block[timing_at + 1..]);
        if !text.is_empty() {
            cues.push(RawCue { start_s, end_s, text });
        }
    }
    if cues.is_empty() {
        return Err(TranscriptError::EmptyFile);
    }
    Ok(Transcript::from_cues(cues, SourceKind::Subtitle))
}

/// Writes the transcript as WebVTT with the line index as cue identifier.
pub fn to_vtt(transcript: &Transcript) -> String {
    let mut out = String::from("WEBVTT\n\n");
    for line in transcript.lines() {
        let _ = write!(
            out,
            "{}\n{} --> {}\n{}\n\n",
            line.index,
            format_timestamp(line.start_s, '.'),
            format_timestamp(line.end_s, '.'),
            escape_text(&line.text)
        );
    }
    out
}

fn is_keyword_line(line: &str, kw: &str) -> bool {
    line.strip_prefix(kw)
        .is_some_and(|rest| rest.is_empty() || rest.starts_with([' ', '\t']))
}

fn parse_timing(line: &str) -> Result<(f64, f64), String> {
    let caps = TIMING
        .captures(line)
        .ok_or_else(|| format!("bad timestamp syntax in {line:?}"))?;
    let num = |i: usize| -> Result<u64, String> {
        caps.get(i)
            .map_or(Ok(0), |m| m.as_str().parse().map_err(|e: std::num::ParseIntError| e.to_string()))
    };
    let (m1, s1, m2, s2) = (num(2)?, num(3)?, num(6)?, num(7)?);
    if s1 > 59 || s2 > 59 || (caps.get(1).is_some() && m1 > 59) || (caps.get(5).is_some() && m2 > 59)
    {
        return Err(format!("minutes/seconds out of range in {line:?}"));
    }
    let start = seconds(num(1)?, m1, s1, num(4)?);
    let end = seconds(num(5)?, m2, s2, num(8)?);
    if start > end {
        return Err(format!("start {start}s is after end {end}s"));
    }
    Ok((start, end))
}

fn malformed(ordinal: usize, reason: impl Into<String>) -> TranscriptError {
    TranscriptError::MalformedCue {
        ordinal,
        reason: reason.into(),
    }
}
