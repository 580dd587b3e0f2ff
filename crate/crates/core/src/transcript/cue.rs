//! Helpers shared by the SRT and WebVTT readers and writers.

use std::sync::LazyLock;

use regex::Regex;

use super::TranscriptError;
use crate::text::normalize_space;

static MARKUP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<[^>]*>|\{\\[^}]*\}").expect("markup pattern"));
static ENTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"&(#[0-9]+|#[xX][0-9a-fA-F]+|[a-zA-Z]+);").expect("entity"));

/// UTF-8 decode with an optional byte-order mark; line endings become `\n`.
pub(crate) fn decode(bytes: &[u8]) -> Result<String, TranscriptError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let s = std::str::from_utf8(bytes).map_err(|_| TranscriptError::InvalidUtf8)?;
    Ok(s.replace("\r\n", "\n").replace('\r', "\n"))
}

/// Splits into blocks separated by one or more blank lines.
pub(crate) fn blocks(content: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for line in content.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(line.trim_end());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Joins cue text lines with single spaces, removing tags and decoding entities.
pub(crate) fn clean_text(lines: &[&str]) -> String {
    let joined = lines.join(" ");
    let stripped = MARKUP.replace_all(&joined, "");
    let decoded = ENTITY.replace_all(&stripped, |caps: &regex::Captures| {
        let name = &caps[1];
        let ch = match name {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" => Some('\''),
            "nbsp" => Some(' '),
            _ if name.starts_with("#x") || name.starts_with("#X") => {
                u32::from_str_radix(&name[2..], 16).ok().and_then(char::from_u32)
            }
            _ if name.starts_with('#') => name[1..].parse().ok().and_then(char::from_u32),
            _ => None,
        };
        ch.map_or_else(|| caps[0].to_string(), String::from)
    });
    normalize_space(&decoded)
}

/// Inverse of the entity decoding in [`clean_text`] for the characters that
/// would otherwise be read back as markup.
pub(crate) fn escape_text(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub(crate) fn seconds(h: u64, m: u64, s: u64, ms: u64) -> f64 {
    ((h * 3600 + m * 60 + s) * 1000 + ms) as f64 / 1000.0
}

/// `HH:MM:SS<sep>mmm`, rounding to the millisecond.
pub(crate) fn format_timestamp(t: f64, sep: char) -> String {
    let total_ms = (t * 1000.0).round() as u64;
    let (h, rem) = (total_ms / 3_600_000, total_ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    let (s, ms) = (rem / 1000, rem % 1000);
    format!("{h:02}:{m:02}:{s:02}{sep}{ms:03}")
}
