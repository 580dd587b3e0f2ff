//! Post-answer reflection: a concise note about the answer and its evidence
//! is appended to the episode the perception spans overlapped most.

use std::collections::BTreeMap;

use serde_json::Value;

use super::build::MANAGER_SYSTEM;
use super::{render_episode, EpisodicMemory, MemoryError, MemoryParams, MemoryView, ReflectionNote};
use crate::backend::{extract_json, ChatBackend, ChatRequest, Part, StagePayload, TemplateId, TemplateSet};
use crate::perception::Query;
use crate::text::normalize_space;

/// Episode with the largest total overlap with `spans` (ties go to the
/// earliest). With no overlap at all, the temporally nearest episode.
pub fn reflection_target(memory: &EpisodicMemory, spans: &[[f64; 2]]) -> usize {
    let overlap = |ep: &super::Episode| -> f64 {
        spans
            .iter()
            .map(|&[s, e]| (e.min(ep.end_s()) - s.max(ep.start_s())).max(0.0))
            .sum()
    };
    let touches = |ep: &super::Episode| {
        spans.iter().any(|&[s, e]| s <= ep.end_s() && ep.start_s() <= e)
    };
    let distance = |ep: &super::Episode| -> f64 {
        spans
            .iter()
            .map(|&[s, e]| (s - ep.end_s()).max(ep.start_s() - e).max(0.0))
            .fold(f64::INFINITY, f64::min)
    };

    let mut best: Option<(usize, f64)> = None;
    for ep in memory.episodes.iter().filter(|ep| touches(ep)) {
        let o = overlap(ep);
        if best.is_none_or(|(_, b)| o > b) {
            best = Some((ep.id, o));
        }
    }
    if let Some((id, _)) = best {
        return id;
    }
    let mut nearest = (0, f64::INFINITY);
    for ep in &memory.episodes {
        let d = distance(ep);
        if d < nearest.1 {
            nearest = (ep.id, d);
        }
    }
    nearest.0
}

/// Returns a new memory with `version + 1` and one note appended to the
/// target episode. Everything else is copied unchanged.
#[allow(clippy::too_many_arguments)]
pub fn reflect(
    query: &Query,
    answer_id: &str,
    evidence: &str,
    memory: &EpisodicMemory,
    spans: &[[f64; 2]],
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    params: &MemoryParams,
) -> Result<EpisodicMemory, MemoryError> {
    let evidence = normalize_space(evidence);
    if evidence.is_empty() {
        return Err(MemoryError::EmptyEvidence);
    }
    let answer = query
        .option(answer_id)
        .ok_or_else(|| MemoryError::UnknownAnswer(answer_id.to_string()))?;
    if memory.episodes.is_empty() {
        return Err(MemoryError::violation("episodes", "must not be empty"));
    }
    let target = reflection_target(memory, spans);

    let bindings = BTreeMap::from([
        ("memory", render_episode(&memory.episodes[target], MemoryView::Narrative)),
        ("query", query.text.clone()),
        ("options", query.render_options()),
        ("answer", format!("({}) {}", answer.label, answer.text)),
        ("evidence", evidence.clone()),
    ]);
    let prompt = templates.get(TemplateId::Reflection).render(&bindings)?;
    let payload = StagePayload::Reflect {
        query: query.text.clone(),
        answer_id: answer.label.clone(),
        answer_text: answer.text.clone(),
        evidence,
        summary_budget: params.summary_budget,
    };
    let request = ChatRequest::new(MANAGER_SYSTEM, vec![Part::text(prompt)]).with_payload(payload);
    let reply = backend
        .complete(&request)
        .map_err(|source| MemoryError::Backend { stage: "reflection", source })?
        .text;
    let summary = match extract_json(&reply) {
        Some(v) => normalize_space(v.get("summary").and_then(Value::as_str).unwrap_or_default()),
        None => normalize_space(&reply),
    };
    if summary.is_empty() {
        return Err(MemoryError::EmptySummary { episode: target });
    }

    let mut next = memory.clone();
    next.version = memory.version + 1;
    next.episodes[target].reflections.push(ReflectionNote {
        query: query.text.clone(),
        answer_id: answer.label.clone(),
        summary,
        created_version: next.version,
    });
    Ok(next)
}
