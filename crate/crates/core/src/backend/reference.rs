//! Deterministic stand-in for both agents. Each stage is answered by a small
//! lexical rule over the request payload, so every pipeline stage can be
//! checked against hand-traced golden values.

use std::collections::{BTreeSet, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde_json::json;

use super::payload::{LineTiming, OptionText, StagePayload};
use super::{BackendError, BackendProfile, ChatBackend, ChatRequest, ChatResponse, Part};
use crate::text::{content_set, is_stopword, plain_words, truncate_tokens, whitespace_tokens};

pub const REFERENCE_NAME: &str = "reference";
pub const REFERENCE_VL_NAME: &str = "reference-vl";

static SUMMARY_PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^Event \d+:\s*").expect("prefix pattern"));

#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    profile: BackendProfile,
}

impl ReferenceBackend {
    /// Text-only profile, used for the memory manager.
    pub fn text() -> Self {
        Self::with_profile(REFERENCE_NAME, false)
    }

    /// Accepts image parts (and ignores their content), used for the reasoner.
    pub fn multimodal() -> Self {
        Self::with_profile(REFERENCE_VL_NAME, true)
    }

    fn with_profile(name: &str, multimodal: bool) -> Self {
        Self {
            profile: BackendProfile {
                name: name.into(),
                multimodal,
                deterministic: true,
            },
        }
    }
}

impl ChatBackend for ReferenceBackend {
    fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let payload = request.payload.as_ref().ok_or_else(|| {
            BackendError::InvalidRequest("reference backend needs a stage payload".into())
        })?;
        let text = match payload {
            StagePayload::Segment {
                lines,
                gap_threshold_s,
                max_lines,
            } => json!({ "events": segment(lines, *gap_threshold_s, *max_lines) }).to_string(),
            StagePayload::Abstract {
                episode_id,
                text,
                summary_budget,
            } => {
                let summary = format!("Event {}: {}", episode_id + 1, truncate_tokens(text, *summary_budget));
                json!({ "summary": summary, "entities": entities(&summary) }).to_string()
            }
            StagePayload::Link {
                summaries,
                conflict_lexicon,
                refers_back_min_overlap,
            } => link(summaries, conflict_lexicon, *refers_back_min_overlap).to_string(),
            StagePayload::Perceive {
                query,
                options,
                lines,
                top_k,
            } => json!({ "lines": perceive(query, options, lines, *top_k) }).to_string(),
            StagePayload::Act {
                options,
                transcript_lines,
                memory_summaries,
            } => act(options, transcript_lines, memory_summaries),
            StagePayload::Reflect {
                answer_id,
                answer_text,
                evidence,
                summary_budget,
                ..
            } => {
                let summary = format!("({answer_id}) {answer_text}: {}", truncate_tokens(evidence, *summary_budget));
                json!({ "summary": summary }).to_string()
            }
        };
        let prompt_tokens = whitespace_tokens(&request.system)
            + request
                .user_parts
                .iter()
                .map(|p| match p {
                    Part::Text { text } => whitespace_tokens(text),
                    Part::Image { .. } => 0,
                })
                .sum::<usize>();
        Ok(ChatResponse {
            completion_tokens: whitespace_tokens(&text) as u64,
            prompt_tokens: prompt_tokens as u64,
            text,
        })
    }
}

/// New event when the gap to the running end of the current event reaches
/// `gap_threshold_s`, or when the event already holds `max_lines` lines.
pub(crate) fn segment(lines: &[LineTiming], gap_threshold_s: f64, max_lines: usize) -> Vec<[usize; 2]> {
    let Some(first) = lines.first() else {
        return Vec::new();
    };
    let mut ranges = Vec::new();
    let (mut start, mut prev, mut count, mut end_s) = (first.index, first.index, 1, first.end_s);
    for line in &lines[1..] {
        if line.start_s - end_s >= gap_threshold_s || count >= max_lines.max(1) {
            ranges.push([start, prev]);
            start = line.index;
            count = 0;
            end_s = line.end_s;
        }
        count += 1;
        prev = line.index;
        end_s = end_s.max(line.end_s);
    }
    ranges.push([start, prev]);
    ranges
}

/// Capitalized tokens that do not open a sentence, in order of first use.
pub(crate) fn entities(summary: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut sentence_start = true;
    for raw in summary.split_whitespace() {
        let initial = sentence_start;
        sentence_start = raw.ends_with(['.', '!', '?']);
        let word = raw.trim_matches(|c: char| !c.is_alphanumeric());
        let word = word
            .strip_suffix("'s")
            .or_else(|| word.strip_suffix("\u{2019}s"))
            .unwrap_or(word);
        let capitalized = word.chars().next().is_some_and(char::is_uppercase);
        if initial || !capitalized || is_stopword(&word.to_lowercase()) {
            continue;
        }
        if !out.iter().any(|e| e == word) {
            out.push(word.to_string());
        }
    }
    out
}

fn summary_body(summary: &str) -> &str {
    SUMMARY_PREFIX
        .find(summary)
        .map_or(summary, |m| &summary[m.end()..])
}

fn link(summaries: &[String], lexicon: &[String], min_overlap: usize) -> serde_json::Value {
    let n = summaries.len();
    let sets: Vec<BTreeSet<String>> = summaries.iter().map(|s| content_set(summary_body(s))).collect();
    // token -> episodes containing it, filled as k advances
    let mut seen: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut shared = vec![0usize; n];
    let episodes: Vec<_> = (0..n)
        .map(|k| {
            let role = if k == 0 {
                "introduction"
            } else if k == n - 1 {
                "resolution"
            } else if plain_words(&summaries[k]).any(|w| lexicon.contains(&w)) {
                "conflict"
            } else {
                "development"
            };
            let mut links = Vec::new();
            if k > 0 {
                links.push(json!({ "target_id": k - 1, "relation": "precedes" }));
            }
            shared[..k].fill(0);
            for token in &sets[k] {
                for &i in seen.get(token.as_str()).into_iter().flatten() {
                    shared[i] += 1;
                }
            }
            let best = (0..k.saturating_sub(1))
                .map(|i| (shared[i], i))
                .filter(|&(count, _)| count >= min_overlap.max(1))
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            for token in &sets[k] {
                seen.entry(token.as_str()).or_default().push(k);
            }
            if let Some((_, i)) = best {
                links.push(json!({ "target_id": i, "relation": "refers_back" }));
            }
            json!({ "id": k, "narrative_role": role, "causal_links": links })
        })
        .collect();
    json!({ "episodes": episodes })
}

/// Lines sharing content tokens with the query or options, best `top_k` by
/// overlap (earlier line wins ties), returned in transcript order.
fn perceive(query: &str, options: &[String], lines: &[(usize, String)], top_k: usize) -> Vec<usize> {
    let mut wanted = content_set(query);
    for o in options {
        wanted.extend(content_set(o));
    }
    let mut scored: Vec<(usize, usize)> = lines
        .iter()
        .map(|(idx, text)| (content_set(text).intersection(&wanted).count(), *idx))
        .filter(|&(score, _)| score > 0)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = scored.into_iter().take(top_k).map(|(_, i)| i).collect();
    picked.sort_unstable();
    picked
}

/// Index of the largest score; the first one wins ties.
pub(crate) fn argmax_first(scores: &[usize]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}

fn act(options: &[OptionText], transcript: &[String], summaries: &[String]) -> String {
    let mut context = BTreeSet::new();
    for t in transcript.iter().chain(summaries) {
        context.extend(content_set(t));
    }
    let scores: Vec<usize> = options
        .iter()
        .map(|o| content_set(&o.text).intersection(&context).count())
        .collect();
    let Some(best) = argmax_first(&scores) else {
        return "No options were given.".into();
    };
    let chosen = &options[best];
    let wanted = content_set(&chosen.text);
    let pick = |pool: &[String]| {
        let s: Vec<usize> = pool
            .iter()
            .map(|t| content_set(t).intersection(&wanted).count())
            .collect();
        argmax_first(&s).map(|i| pool[i].clone())
    };
    let evidence = pick(transcript)
        .or_else(|| pick(summaries))
        .unwrap_or_else(|| "No textual evidence was provided.".into());
    format!("Answer: ({}) {}\nEvidence: {}", chosen.label, chosen.text, evidence)
}
