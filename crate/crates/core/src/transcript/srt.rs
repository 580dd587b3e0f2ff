use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;

use super::cue::{blocks, clean_text, decode, escape_text, format_timestamp, seconds};
use super::{RawCue, SourceKind, Transcript, TranscriptError};

static TIMING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^\s*(\d+):(\d{2}):(\d{2})[,.](\d{3})\s*-->\s*(\d+):(\d{2}):(\d{2})[,.](\d{3})(?:\s.*)?$",
    )
    .expect("srt timing pattern")
});

/// Parses a SubRip file. Cues whose text is empty after tag removal are dropped.
pub fn parse_srt(bytes: &[u8]) -> Result<Transcript, TranscriptError> {
    let content = decode(bytes)?;
    let mut cues = Vec::new();
    for (i, block) in blocks(&content).iter().enumerate() {
        let ordinal = i + 1;
        let timing_at = match block.iter().position(|l| l.contains("-->")) {
            Some(0) => 0,
            Some(1) if is_index(block[0]) => 1,
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

/// Writes the transcript as SubRip, numbering cues by line index.
pub fn to_srt(transcript: &Transcript) -> String {
    let mut out = String::new();
    for line in transcript.lines() {
        let _ = write!(
            out,
            "{}\n{} --> {}\n{}\n\n",
            line.index,
            format_timestamp(line.start_s, ','),
            format_timestamp(line.end_s, ','),
            escape_text(&line.text)
        );
    }
    out
}

fn is_index(line: &str) -> bool {
    let t = line.trim();
    !t.is_empty() && t.chars().all(|c| c.is_ascii_digit())
}

fn parse_timing(line: &str) -> Result<(f64, f64), String> {
    let caps = TIMING
        .captures(line)
        .ok_or_else(|| format!("bad timestamp syntax in {line:?}"))?;
    let num = |i: usize| caps[i].parse::<u64>().map_err(|e| e.to_string());
    let (m1, s1, m2, s2) = (num(2)?, num(3)?, num(6)?, num(7)?);
    if m1 > 59 || s1 > 59 || m2 > 59 || s2 > 59 {
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
