//! Prompt templates with `{name}` placeholders.
//!
//! Only the names in [`PLACEHOLDERS`] are placeholders; any other braced text
//! (JSON examples in a prompt, say) passes through untouched.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PLACEHOLDERS: &[&str] = &["query", "options", "transcript", "memory", "answer", "evidence"];

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").expect("placeholder pattern"));

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("placeholder {{{0}}} is not bound")]
    UnboundPlaceholder(String),
    #[error("bound text for the template reintroduces placeholder {{{0}}}")]
    ResidualPlaceholder(String),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// Memory construction, step 1: event boundaries.
    Segmentation,
    /// Memory construction, step 2: schematic summary of one event.
    Abstraction,
    /// Memory construction, step 3: narrative roles and causal links.
    Narrative,
    Perception,
    Action,
    Reflection,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        Self::Segmentation,
        Self::Abstraction,
        Self::Narrative,
        Self::Perception,
        Self::Action,
        Self::Reflection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Segmentation => "segmentation",
            Self::Abstraction => "abstraction",
            Self::Narrative => "narrative",
            Self::Perception => "perception",
            Self::Action => "action",
            Self::Reflection => "reflection",
        }
    }

    pub fn default_body(self) -> &'static str {
        match self {
            Self::Segmentation => SEGMENTATION,
            Self::Abstraction => ABSTRACTION,
            Self::Narrative => NARRATIVE,
            Self::Perception => PERCEPTION,
            Self::Action => ACTION,
            Self::Reflection => REFLECTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
}

impl PromptTemplate {
    pub fn builtin(id: TemplateId) -> Self {
        Self {
            id,
            body: id.default_body().to_string(),
        }
    }

    /// Placeholder names used by the body, in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for c in PLACEHOLDER.captures_iter(&self.body) {
            let name = c.get(1).map_or("", |m| m.as_str());
            if PLACEHOLDERS.contains(&name) && !seen.contains(&name) {
                seen.push(name);
            }
        }
        seen
    }

    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        render_template(self, bindings)
    }
}

/// Substitutes every known placeholder verbatim. Fails if one is unbound,
/// or if the bound text itself carries a placeholder token into the output.
pub fn render_template(
    template: &PromptTemplate,
    bindings: &BTreeMap<&str, String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.body.len());
    let mut last = 0;
    for caps in PLACEHOLDER.captures_iter(&template.body) {
        let whole = caps.get(0).expect("match");
        let name = &caps[1];
        if !PLACEHOLDERS.contains(&name) {
            continue;
        }
        let value = bindings
            .get(name)
            .ok_or_else(|| TemplateError::UnboundPlaceholder(name.to_string()))?;
        out.push_str(&template.body[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template.body[last..]);
    if let Some(name) = PLACEHOLDERS.iter().find(|n| out.contains(&format!("{{{n}}}"))) {
        return Err(TemplateError::ResidualPlaceholder(name.to_string()));
    }
    Ok(out)
}

/// Built-in templates, optionally overridden from `<dir>/<name>.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            templates: TemplateId::ALL
                .iter()
                .map(|&id| (id, PromptTemplate::builtin(id)))
                .collect(),
        }
    }
}

impl TemplateSet {
    pub fn load_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.name()));
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            set.templates.insert(id, PromptTemplate { id, body });
        }
        Ok(set)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id, template);
    }
}

const SEGMENTATION: &str = r#"You organize a video's speech transcript into episodic memory.
Read the numbered transcript below and detect event boundaries: split it into
coherent event-level units, starting a new unit wherever the topic or situation
shifts. Units must be contiguous, in order, and together cover every line.

Transcript (one line per cue: [index] start-end text):
{transcript}

Reply with JSON only: {"events": [[first_index, last_index], ...]}"#;

const ABSTRACTION: &str = r#"You organize a video's speech transcript into episodic memory.
The lines below form one event-level unit. Distill its situation-level meaning:
drop fillers, repetitions and discourse markers, and describe what happens as an
abstract event template (who takes part, in what roles, in what situation).

Event lines:
{transcript}

Reply with JSON only: {"summary": "<one or two sentences>", "entities": ["<participant or role>", ...]}"#;

const NARRATIVE: &str = r#"You organize a video's speech transcript into episodic memory.
Below are the event-level units of the video in temporal order. Reason across
events: give each unit its narrative role (introduction, development, conflict,
resolution or other) from the surrounding discourse and temporal flow, and list
its dependencies on earlier units. Allowed relations: "precedes" (the target
happens right before), "causes" (the target leads to this unit) and
"refers_back" (this unit recalls the target). Targets must be earlier units.

Events:
{memory}

Reply with JSON only: {"episodes": [{"id": 0, "narrative_role": "introduction", "causal_links": [{"target_id": 0, "relation": "precedes"}]}, ...]}"#;

const PERCEPTION: &str = r#"You retrieve evidence for a question about a video.
Using the episodic memory for global context, find the minimally sufficient set
of transcript lines needed to answer the question. Their timestamps will be used
to cut the matching video segments, so prefer the lines where the relevant
action or statement actually happens.

Episodic memory:
{memory}

Transcript (one line per cue: [index] start-end text):
{transcript}

Question: {query}
Options:
{options}

Reply with JSON only: {"lines": [index, ...]} (an empty list if nothing is relevant)."#;

const ACTION: &str = r#"Question: {query}
Options:
{options}

Choose the single best option using the evidence above. Reply in the form:
Answer: (<letter>) <option text>
Evidence: <what in the video supports the answer>"#;

const REFLECTION: &str = r#"You maintain the episodic memory of a video.
A question about the video was just answered. Compress the answer and the
evidence behind it into a concise event-level note that will be appended to the
episode it concerns, so later questions can reuse what was observed.

Relevant episode:
{memory}

Question: {query}
Options:
{options}
Predicted answer: {answer}
Evidence: {evidence}

Reply with JSON only: {"summary": "<one sentence>"}"#;
