use std::sync::LazyLock;

use regex::Regex;

use super::ReasoningError;
use crate::perception::AnswerOption;

static KEYWORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i:\b(?:answer|final)\b(?:\s+(?:is|would\s+be|should\s+be))?)\s*[:\-]?\s*\(?([A-Z])(?:\)|\b)")
        .expect("valid regex")
});
static BRACKETED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Z])\)").expect("valid regex"));
static EVIDENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bevidence\s*:").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub answer_id: String,
    pub evidence: String,
}

/// Reads the chosen option from a free-form reply. Passes, in order:
/// `Answer:`/`final:` followed by a label, the first bracketed label, then a
/// verbatim option text. Labels outside `options` are skipped.
pub fn parse_answer(text: &str, options: &[AnswerOption]) -> Result<ParsedAnswer, ReasoningError> {
    let valid = |l: &str| options.iter().any(|o| o.label == l);
    let pick = |re: &Regex| {
        re.captures_iter(text)
            .map(|c| c[1].to_string())
            .find(|l| valid(l))
    };
    let answer_id = pick(&KEYWORD)
        .or_else(|| pick(&BRACKETED))
        .or_else(|| by_option_text(text, options))
        .ok_or_else(|| ReasoningError::UnparseableAnswer {
            response: text.chars().take(200).collect(),
        })?;
    let evidence = EVIDENCE
        .find(text)
        .map(|m| text[m.end()..].trim())
        .filter(|e| !e.is_empty())
        .unwrap_or_else(|| text.trim())
        .to_string();
    Ok(ParsedAnswer { answer_id, evidence })
}

/// Option whose text occurs earliest in the reply (case-insensitive);
/// longer texts win at the same position.
fn by_option_text(text: &str, options: &[AnswerOption]) -> Option<String> {
    let hay = text.to_lowercase();
    options
        .iter()
        .filter(|o| !o.text.trim().is_empty())
        .filter_map(|o| hay.find(&o.text.trim().to_lowercase()).map(|pos| (pos, o)))
        .min_by(|(pa, a), (pb, b)| pa.cmp(pb).then(b.text.len().cmp(&a.text.len())))
        .map(|(_, o)| o.label.clone())
}
