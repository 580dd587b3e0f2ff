//! Memory construction: event segmentation, schematic abstraction per event,
//! then narrative roles and causal links across events.

use std::collections::BTreeMap;

use serde_json::Value;

use super::{CausalLink, Episode, EpisodicMemory, MemoryError, MemoryParams, NarrativeRole, Relation};
use crate::backend::{extract_json, heuristic_segments, ChatBackend, ChatRequest, LineTiming, Part, StagePayload, TemplateId, TemplateSet};
use crate::text::normalize_space;
use crate::transcript::{render_lines, Transcript};
use crate::warning::Warning;

pub(crate) const MANAGER_SYSTEM: &str = "You are the memory manager agent of a long-video question answering system. \
Follow the task instructions exactly and reply only in the requested format.";

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub summary: String,
    pub entities: Vec<String>,
}

/// An episode before the narrative pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftEpisode {
    pub id: usize,
    pub span: [f64; 2],
    pub line_range: [usize; 2],
    pub schema: Schema,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Narrative {
    pub role: NarrativeRole,
    pub links: Vec<CausalLink>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub memory: EpisodicMemory,
    pub warnings: Vec<Warning>,
}

fn call(
    backend: &dyn ChatBackend,
    stage: &'static str,
    prompt: String,
    payload: StagePayload,
) -> Result<String, MemoryError> {
    let request = ChatRequest::new(MANAGER_SYSTEM, vec![Part::text(prompt)]).with_payload(payload);
    backend
        .complete(&request)
        .map(|r| r.text)
        .map_err(|source| MemoryError::Backend { stage, source })
}

fn degenerate(stage: &str, detail: impl Into<String>) -> Warning {
    Warning::DegenerateOutput {
        stage: stage.into(),
        detail: detail.into(),
    }
}

/// Splits the transcript into contiguous event-level line ranges covering
/// every line. Model output that does not form such a partition is repaired.
pub fn segment_events(
    transcript: &Transcript,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    params: &MemoryParams,
) -> Result<(Vec<[usize; 2]>, Vec<Warning>), MemoryError> {
    if transcript.is_empty() {
        return Err(MemoryError::EmptyTranscript);
    }
    let n = transcript.len();
    let bindings = BTreeMap::from([("transcript", render_lines(transcript.lines()))]);
    let prompt = templates.get(TemplateId::Segmentation).render(&bindings)?;
    let timings: Vec<LineTiming> = transcript
        .lines()
        .iter()
        .map(|l| LineTiming {
            index: l.index,
            start_s: l.start_s,
            end_s: l.end_s,
        })
        .collect();
    let payload = StagePayload::Segment {
        lines: timings.clone(),
        gap_threshold_s: params.gap_threshold_s,
        max_lines: params.max_lines,
    };
    let reply = call(backend, "segmentation", prompt, payload)?;

    let mut warnings = Vec::new();
    let Some(events) = extract_json(&reply).and_then(|v| v.get("events").and_then(Value::as_array).cloned()) else {
        warnings.push(degenerate(
            "segmentation",
            "no {\"events\": [...]} object in reply; using gap/length segmentation",
        ));
        return Ok((heuristic_segments(&timings, params.gap_threshold_s, params.max_lines), warnings));
    };
    let mut raw = Vec::new();
    for (i, ev) in events.iter().enumerate() {
        match range_of(ev) {
            Some(r) => raw.push(r),
            None => warnings.push(degenerate("segmentation", format!("events[{i}] is not a [first, last] pair"))),
        }
    }
    let (ranges, issues) = repair_partition(&raw, n);
    warnings.extend(issues.into_iter().map(|d| degenerate("segmentation", d)));
    Ok((ranges, warnings))
}

fn range_of(v: &Value) -> Option<(i64, i64)> {
    match v {
        Value::Array(a) if a.len() == 2 => Some((a[0].as_i64()?, a[1].as_i64()?)),
        Value::Object(o) => {
            let first = o.get("first").or_else(|| o.get("start"))?.as_i64()?;
            let last = o.get("last").or_else(|| o.get("end"))?.as_i64()?;
            Some((first, last))
        }
        _ => None,
    }
}

/// Turns arbitrary `(first, last)` pairs into a partition of `1..=n`:
/// clip to bounds, drop empty or fully covered ranges, trim overlaps, fill
/// gaps by extending the previous range. Returns the issues it fixed.
pub(crate) fn repair_partition(raw: &[(i64, i64)], n: usize) -> (Vec<[usize; 2]>, Vec<String>) {
    let mut issues = Vec::new();
    let n_i = n as i64;
    let mut clipped: Vec<(i64, i64)> = Vec::new();
    for &(a, b) in raw {
        let (ca, cb) = (a.max(1), b.min(n_i));
        if (ca, cb) != (a, b) {
            issues.push(format!("range [{a}, {b}] clipped to [1, {n}]"));
        }
        if ca > cb {
            issues.push(format!("range [{a}, {b}] is empty and was dropped"));
            continue;
        }
        clipped.push((ca, cb));
    }
    clipped.sort_unstable();

    let mut out: Vec<[usize; 2]> = Vec::new();
    let mut next = 1i64;
    for (a, b) in clipped {
        if b < next {
            issues.push(format!("range [{a}, {b}] overlaps earlier ranges and was dropped"));
            continue;
        }
        let mut a = a;
        if a < next {
            issues.push(format!("range [{a}, {b}] overlaps; trimmed to start at {next}"));
            a = next;
        } else if a > next {
            issues.push(format!("lines {next}..{} were uncovered", a - 1));
            match out.last_mut() {
                Some(prev) => prev[1] = (a - 1) as usize,
                None => a = next,
            }
        }
        out.push([a as usize, b as usize]);
        next = b + 1;
    }
    if out.is_empty() {
        issues.push("no usable ranges; one event covers the whole transcript".into());
        out.push([1, n]);
    } else if next <= n_i {
        issues.push(format!("lines {next}..{n} were uncovered"));
        out.last_mut().expect("non-empty")[1] = n;
    }
    (out, issues)
}

/// Summarizes one event unit into a schematic summary and its participants.
pub fn abstract_schema(
    transcript: &Transcript,
    line_range: [usize; 2],
    episode_id: usize,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    params: &MemoryParams,
) -> Result<(Schema, Vec<Warning>), MemoryError> {
    let [first, last] = line_range;
    if first == 0 || first > last || last > transcript.len() {
        return Err(MemoryError::violation(
            "line_range",
            format!("[{first}, {last}] outside 1..={}", transcript.len()),
        ));
    }
    let lines = transcript.range(first, last);
    let bindings = BTreeMap::from([("transcript", render_lines(lines))]);
    let prompt = templates.get(TemplateId::Abstraction).render(&bindings)?;
    let text = lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join(" ");
    let payload = StagePayload::Abstract {
        episode_id,
        text,
        summary_budget: params.summary_budget,
    };
    let reply = call(backend, "abstraction", prompt, payload)?;

    let mut warnings = Vec::new();
    let (summary, entities) = match extract_json(&reply) {
        Some(v) => {
            let summary = v.get("summary").and_then(Value::as_str).unwrap_or_default();
            let entities: Vec<String> = v
                .get("entities")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(normalize_space).collect())
                .unwrap_or_default();
            (normalize_space(summary), entities)
        }
        None => {
            if !reply.trim().is_empty() {
                warnings.push(degenerate("abstraction", format!("episode {episode_id}: reply is not JSON; using it verbatim")));
            }
            (normalize_space(&reply), Vec::new())
        }
    };
    if summary.is_empty() {
        return Err(MemoryError::EmptySummary { episode: episode_id });
    }
    let mut unique: Vec<String> = Vec::new();
    for e in entities {
        if !e.is_empty() && !unique.contains(&e) {
            unique.push(e);
        }
    }
    Ok((
        Schema {
            summary,
            entities: unique,
        },
        warnings,
    ))
}

/// Assigns one narrative role per episode and links each to earlier ones.
pub fn link_narrative(
    drafts: &[DraftEpisode],
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    params: &MemoryParams,
) -> Result<(Vec<Narrative>, Vec<Warning>), MemoryError> {
    if drafts.is_empty() {
        return Err(MemoryError::EmptyTranscript);
    }
    let listing: String = drafts
        .iter()
        .map(|d| format!("「{} | {:.1}–{:.1} | {}」\n", d.id, d.span[0], d.span[1], d.schema.summary))
        .collect();
    let bindings = BTreeMap::from([("memory", listing)]);
    let prompt = templates.get(TemplateId::Narrative).render(&bindings)?;
    let payload = StagePayload::Link {
        summaries: drafts.iter().map(|d| d.schema.summary.clone()).collect(),
        conflict_lexicon: params.conflict_lexicon.clone(),
        refers_back_min_overlap: params.refers_back_min_overlap,
    };
    let reply = call(backend, "narrative", prompt, payload)?;

    let mut warnings = Vec::new();
    let mut out: Vec<Option<Narrative>> = vec![None; drafts.len()];
    match extract_json(&reply).and_then(|v| v.get("episodes").and_then(Value::as_array).cloned()) {
        Some(entries) => {
            for (pos, entry) in entries.iter().enumerate() {
                let id = entry.get("id").and_then(Value::as_u64).map_or(pos, |i| i as usize);
                if id >= drafts.len() {
                    warnings.push(degenerate("narrative", format!("entry for unknown episode {id} ignored")));
                    continue;
                }
                if out[id].is_some() {
                    warnings.push(degenerate("narrative", format!("duplicate entry for episode {id} ignored")));
                    continue;
                }
                out[id] = Some(parse_narrative(id, entry, &mut warnings));
            }
        }
        None => warnings.push(degenerate("narrative", "no {\"episodes\": [...]} object in reply")),
    }
    let filled = out
        .into_iter()
        .enumerate()
        .map(|(id, n)| {
            n.unwrap_or_else(|| {
                warnings.push(degenerate("narrative", format!("episode {id} missing; role set to other")));
                Narrative {
                    role: NarrativeRole::Other,
                    links: Vec::new(),
                }
            })
        })
        .collect();
    Ok((filled, warnings))
}

fn parse_narrative(id: usize, entry: &Value, warnings: &mut Vec<Warning>) -> Narrative {
    let role_str = entry
        .get("narrative_role")
        .or_else(|| entry.get("role"))
        .and_then(Value::as_str)
        .unwrap_or("");
    let role = NarrativeRole::parse(role_str).unwrap_or_else(|| {
        warnings.push(degenerate("narrative", format!("episode {id}: unknown role {role_str:?}; using other")));
        NarrativeRole::Other
    });
    let mut links: Vec<CausalLink> = Vec::new();
    let raw_links = entry
        .get("causal_links")
        .or_else(|| entry.get("links"))
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    for l in raw_links {
        let invalid = |detail: String| Warning::InvalidLink { episode: id, detail };
        let target = l.get("target_id").and_then(Value::as_u64);
        let relation = l.get("relation").and_then(Value::as_str).and_then(Relation::parse);
        match (target, relation) {
            (Some(t), Some(relation)) if (t as usize) < id => {
                let link = CausalLink {
                    target_id: t as usize,
                    relation,
                };
                if links.contains(&link) {
                    warnings.push(invalid(format!("duplicate {} link to {t}", relation.as_str())));
                } else {
                    links.push(link);
                }
            }
            (Some(t), Some(relation)) => {
                warnings.push(invalid(format!("{} link to {t} does not point to an earlier episode", relation.as_str())))
            }
            _ => warnings.push(invalid(format!("unreadable link {l}"))),
        }
    }
    Narrative { role, links }
}

/// Full construction pass. The result has version 1.
pub fn build_memory(
    transcript: &Transcript,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    params: &MemoryParams,
) -> Result<BuildOutput, MemoryError> {
    let (ranges, mut warnings) = segment_events(transcript, backend, templates, params)?;
    let mut drafts = Vec::with_capacity(ranges.len());
    for (id, range) in ranges.into_iter().enumerate() {
        let (schema, w) = abstract_schema(transcript, range, id, backend, templates, params)?;
        warnings.extend(w);
        let lines = transcript.range(range[0], range[1]);
        let start = lines.iter().map(|l| l.start_s).fold(f64::INFINITY, f64::min);
        let end = lines.iter().map(|l| l.end_s).fold(0.0, f64::max);
        drafts.push(DraftEpisode {
            id,
            span: [start, end],
            line_range: range,
            schema,
        });
    }
    let (narratives, w) = link_narrative(&drafts, backend, templates, params)?;
    warnings.extend(w);
    let episodes = drafts
        .into_iter()
        .zip(narratives)
        .map(|(d, n)| Episode {
            id: d.id,
            span: d.span,
            line_range: d.line_range,
            schematic_summary: d.schema.summary,
            entities: d.schema.entities,
            narrative_role: n.role,
            causal_links: n.links,
            reflections: Vec::new(),
        })
        .collect();
    let memory = EpisodicMemory {
        version: 1,
        source_digest: transcript.digest(),
        source_kind: transcript.source_kind(),
        episodes,
    };
    memory.validate()?;
    Ok(BuildOutput { memory, warnings })
}
