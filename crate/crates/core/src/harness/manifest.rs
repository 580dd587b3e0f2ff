use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::Query;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Short,
    Medium,
    Long,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Short => "short",
            Self::Medium => "medium",
            Self::Long => "long",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub question_id: String,
    pub video_id: String,
    pub duration_s: f64,
    pub split: Split,
    pub category: String,
    pub query: Query,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtitle_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_path: Option<PathBuf>,
}

impl BenchmarkItem {
    /// The subtitle file when it exists, else the caption file.
    pub fn source_path(&self) -> Option<&Path> {
        self.subtitle_path
            .as_deref()
            .filter(|p| p.is_file())
            .or_else(|| self.caption_path.as_deref().filter(|p| p.is_file()))
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("{path}{}: {reason}", item.as_ref().map(|i| format!(" (item {i})")).unwrap_or_default())]
pub struct ManifestError {
    pub path: String,
    pub item: Option<String>,
    pub reason: String,
}

/// Reads a JSONL manifest. Relative file paths are resolved against the
/// manifest's directory; every item is validated.
pub fn load_manifest(path: &Path) -> Result<Vec<BenchmarkItem>, ManifestError> {
    let err = |item: Option<String>, reason: String| ManifestError {
        path: path.display().to_string(),
        item,
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(None, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut item: BenchmarkItem =
            serde_json::from_str(line).map_err(|e| err(None, format!("line {}: {e}", n + 1)))?;
        let id = Some(item.question_id.clone());
        for p in [&mut item.subtitle_path, &mut item.caption_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        validate_item(&item).map_err(|r| err(id.clone(), r))?;
        if !seen.insert(item.question_id.clone()) {
            return Err(err(id, "duplicate question_id".into()));
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(err(None, "no items".into()));
    }
    Ok(items)
}

pub fn validate_item(item: &BenchmarkItem) -> Result<(), String> {
    if item.question_id.trim().is_empty() || item.video_id.trim().is_empty() {
        return Err("question_id and video_id must be non-empty".into());
    }
    if !(item.duration_s.is_finite() && item.duration_s > 0.0) {
        return Err(format!("duration_s must be positive, got {}", item.duration_s));
    }
    if item.query.option(&item.gold).is_none_or(|o| o.label != item.gold) {
        return Err(format!("gold {:?} is not an option label", item.gold));
    }
    if item.source_path().is_none() {
        let shown = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        return Err(format!(
            "no readable transcript (subtitle_path {}, caption_path {})",
            shown(&item.subtitle_path),
            shown(&item.caption_path)
        ));
    }
    Ok(())
}
