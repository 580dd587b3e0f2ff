use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::pipeline::{ensure_memory, load_item_transcript, run_pipeline, Backends, PipelineError, PipelineOptions};
use super::{BenchmarkItem, HarnessError, MemoryStore, Split};
use crate::memory::EpisodicMemory;
use crate::reasoning::{EvidenceConfig, TokenUsage};
use crate::transcript::Transcript;
use crate::warning::Warning;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub transcript_tokens: f64,
    pub memory_tokens: f64,
    /// `(1 − memory/transcript) · 100`; absent when the transcript is empty.
    pub reduction_pct: Option<f64>,
}

pub fn compute_token_stats(transcript_tokens: f64, memory_tokens: f64) -> TokenStats {
    TokenStats {
        transcript_tokens,
        memory_tokens,
        reduction_pct: (transcript_tokens > 0.0).then(|| (1.0 - memory_tokens / transcript_tokens) * 100.0),
    }
}

/// Transcript body tokens against the constructed memory's narrative
/// serialization. Reflection notes are not counted.
pub fn memory_token_stats(transcript: &Transcript, memory: &EpisodicMemory) -> TokenStats {
    let mut constructed = memory.clone();
    for ep in &mut constructed.episodes {
        ep.reflections.clear();
    }
    compute_token_stats(transcript.token_count().count as f64, constructed.token_count() as f64)
}

pub const BUCKETS: [&str; 4] = ["0-2 min", "4-15 min", "30-60 min", "other"];

/// Duration bucket of a video; the gaps between ranges go to `other`.
pub fn duration_bucket(duration_s: f64) -> &'static str {
    let m = duration_s / 60.0;
    if (0.0..=2.0).contains(&m) {
        BUCKETS[0]
    } else if (4.0..=15.0).contains(&m) {
        BUCKETS[1]
    } else if (30.0..=60.0).contains(&m) {
        BUCKETS[2]
    } else {
        BUCKETS[3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Answered,
    Unparseable,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub question_id: String,
    pub video_id: String,
    pub split: Split,
    pub category: String,
    pub gold: String,
    pub status: ItemStatus,
    pub answer_id: Option<String>,
    pub correct: bool,
    pub evidence: Option<String>,
    pub config: EvidenceConfig,
    pub latency_ms: Option<u64>,
    pub token_usage: Option<TokenUsage>,
    pub memory_version: Option<u32>,
    /// `stage: message` for failed items.
    pub error: Option<String>,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy_pct: Option<f64>,
}

impl Accuracy {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
        self.accuracy_pct = Some(self.correct as f64 / self.total as f64 * 100.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket: String,
    pub videos: usize,
    /// Means over the bucket's videos; the reduction is taken from the means.
    pub stats: TokenStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub group: String,
    pub name: String,
    pub baseline_pct: Option<f64>,
    pub current_pct: Option<f64>,
    pub delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_label: String,
    pub baseline_config: EvidenceConfig,
    pub rows: Vec<DeltaRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: EvidenceConfig,
    pub config_label: String,
    /// Failed items were left out of every accuracy denominator.
    pub strict: bool,
    pub overall: Accuracy,
    pub by_split: BTreeMap<String, Accuracy>,
    pub by_category: BTreeMap<String, Accuracy>,
    pub unparseable: usize,
    pub errors: usize,
    pub token_stats: Vec<BucketStats>,
    pub memory_versions: BTreeMap<String, u32>,
    pub comparison: Option<Comparison>,
    pub items: Vec<ItemResult>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Attaches per-group deltas (this run minus `baseline`).
    pub fn compare_with(&mut self, baseline: &RunReport) {
        let mut rows = vec![delta("overall", "all", &baseline.overall, &self.overall)];
        for (group, base, cur) in [
            ("split", &baseline.by_split, &self.by_split),
            ("category", &baseline.by_category, &self.by_category),
        ] {
            let names: BTreeSet<&String> = base.keys().chain(cur.keys()).collect();
            for name in names {
                let b = base.get(name).copied().unwrap_or_default();
                let c = cur.get(name).copied().unwrap_or_default();
                rows.push(delta(group, name, &b, &c));
            }
        }
        self.comparison = Some(Comparison {
            baseline_label: baseline.config_label.clone(),
            baseline_config: baseline.config,
            rows,
        });
    }

    /// Plain-text rendering: accuracy by group, deltas, token compression.
    pub fn render_table(&self) -> String {
        let pct = |p: Option<f64>| p.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
        let mut out = String::new();
        let _ = writeln!(out, "Configuration: {}", self.config_label);
        let _ = writeln!(out, "Evidence: {}", self.config);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:<28} {:>9} {:>9}", "group", "name", "acc (%)", "correct");
        let mut row = |group: &str, name: &str, a: &Accuracy| {
            let _ = writeln!(
                out,
                "{group:<12} {name:<28} {:>9} {:>9}",
                pct(a.accuracy_pct),
                format!("{}/{}", a.correct, a.total)
            );
        };
        row("overall", "all", &self.overall);
        for (k, a) in &self.by_split {
            row("split", k, a);
        }
        for (k, a) in &self.by_category {
            row("category", k, a);
        }
        let _ = writeln!(
            out,
            "\nunparseable answers: {}   failed items: {}{}",
            self.unparseable,
            self.errors,
            if self.strict { " (excluded)" } else { " (counted incorrect)" }
        );
        if let Some(c) = &self.comparison {
            let _ = writeln!(out, "\nDelta vs {}", c.baseline_label);
            let _ = writeln!(
                out,
                "{:<12} {:<28} {:>9} {:>9} {:>9}",
                "group", "name", "baseline", "current", "delta"
            );
            for r in &c.rows {
                let d = r.delta_pct.map_or_else(|| "-".to_string(), |v| format!("{v:+.1}"));
                let _ = writeln!(
                    out,
                    "{:<12} {:<28} {:>9} {:>9} {:>9}",
                    r.group,
                    r.name,
                    pct(r.baseline_pct),
                    pct(r.current_pct),
                    d
                );
            }
        }
        if !self.token_stats.is_empty() {
            let _ = writeln!(out, "\nToken compression");
            let _ = writeln!(
                out,
                "{:<12} {:>7} {:>12} {:>12} {:>14}",
                "duration", "videos", "transcript", "memory", "reduction (%)"
            );
            for b in &self.token_stats {
                let _ = writeln!(
                    out,
                    "{:<12} {:>7} {:>12.1} {:>12.1} {:>14}",
                    b.bucket,
                    b.videos,
                    b.stats.transcript_tokens,
                    b.stats.memory_tokens,
                    pct(b.stats.reduction_pct)
                );
            }
        }
        out
    }
}

fn delta(group: &str, name: &str, base: &Accuracy, cur: &Accuracy) -> DeltaRow {
    DeltaRow {
        group: group.into(),
        name: name.into(),
        baseline_pct: base.accuracy_pct,
        current_pct: cur.accuracy_pct,
        delta_pct: cur.accuracy_pct.zip(base.accuracy_pct).map(|(c, b)| c - b),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub workers: usize,
    pub strict: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            strict: false,
        }
    }
}

struct VideoPrep {
    stats: Result<TokenStats, String>,
    duration_s: f64,
    version: Option<u32>,
}

/// Runs every item and aggregates. Memories are prepared per video first;
/// questions on one video then run in `question_id` order, videos in parallel.
pub fn evaluate(
    items: &[BenchmarkItem],
    config: &EvidenceConfig,
    backends: Backends<'_>,
    store: &MemoryStore,
    opts: &PipelineOptions,
    eval: &EvalOptions,
) -> Result<RunReport, HarnessError> {
    if items.is_empty() {
        return Err(HarnessError::NoItems);
    }
    let mut by_video: BTreeMap<&str, Vec<&BenchmarkItem>> = BTreeMap::new();
    for item in items {
        by_video.entry(&item.video_id).or_default().push(item);
    }
    for group in by_video.values_mut() {
        group.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    }
    let groups: Vec<(&str, Vec<&BenchmarkItem>)> = by_video.into_iter().collect();

    let prep: Vec<VideoPrep> = parallel_map(&groups, eval.workers, |(video_id, group)| {
        let first = group[0];
        let prepared = load_item_transcript(first).and_then(|t| {
            let lock = store.video_lock(video_id);
            let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
            ensure_memory(video_id, &t, backends.manager, store, opts).map(|(m, _)| (t, m))
        });
        match prepared {
            Ok((t, m)) => VideoPrep {
                stats: Ok(memory_token_stats(&t, &m)),
                duration_s: first.duration_s,
                version: Some(m.version),
            },
            Err(e) => VideoPrep {
                stats: Err(format!("{}: {e}", e.stage())),
                duration_s: first.duration_s,
                version: None,
            },
        }
    });

    let results: Vec<Vec<ItemResult>> = parallel_map(&groups, eval.workers, |(_, group)| {
        group
            .iter()
            .map(|item| item_result(item, config, run_pipeline(item, config, backends, store, opts)))
            .collect()
    });
    let mut items_out: Vec<ItemResult> = results.into_iter().flatten().collect();
    items_out.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let mut report = RunReport {
        config: *config,
        config_label: config.label(),
        strict: eval.strict,
        overall: Accuracy::default(),
        by_split: BTreeMap::new(),
        by_category: BTreeMap::new(),
        unparseable: 0,
        errors: 0,
        token_stats: Vec::new(),
        memory_versions: BTreeMap::new(),
        comparison: None,
        items: Vec::new(),
    };
    for r in &items_out {
        match r.status {
            ItemStatus::Unparseable => report.unparseable += 1,
            ItemStatus::Error => report.errors += 1,
            ItemStatus::Answered => {}
        }
        if eval.strict && r.status == ItemStatus::Error {
            continue;
        }
        report.overall.add(r.correct);
        report.by_split.entry(r.split.as_str().to_string()).or_default().add(r.correct);
        report.by_category.entry(r.category.clone()).or_default().add(r.correct);
    }

    let mut sums: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for ((video_id, _), p) in groups.iter().zip(&prep) {
        let Ok(stats) = p.stats else { continue };
        let e = sums.entry(duration_bucket(p.duration_s)).or_default();
        e.0 += 1;
        e.1 += stats.transcript_tokens;
        e.2 += stats.memory_tokens;
        let last = items_out
            .iter()
            .filter(|r| r.video_id == *video_id)
            .filter_map(|r| r.memory_version)
            .max();
        if let Some(v) = last.or(p.version) {
            report.memory_versions.insert(video_id.to_string(), v);
        }
    }
    report.token_stats = BUCKETS
        .iter()
        .filter_map(|b| {
            let &(n, t, m) = sums.get(b)?;
            Some(BucketStats {
                bucket: b.to_string(),
                videos: n,
                stats: compute_token_stats(t / n as f64, m / n as f64),
            })
        })
        .collect();
    report.items = items_out;
    Ok(report)
}

fn item_result(
    item: &BenchmarkItem,
    config: &EvidenceConfig,
    outcome: Result<super::PipelineOutput, PipelineError>,
) -> ItemResult {
    let mut r = ItemResult {
        question_id: item.question_id.clone(),
        video_id: item.video_id.clone(),
        split: item.split,
        category: item.category.clone(),
        gold: item.gold.clone(),
        status: ItemStatus::Answered,
        answer_id: None,
        correct: false,
        evidence: None,
        config: *config,
        latency_ms: None,
        token_usage: None,
        memory_version: None,
        error: None,
        warnings: Vec::new(),
    };
    match outcome {
        Ok(out) => {
            r.correct = out.action.answer_id == item.gold;
            r.answer_id = Some(out.action.answer_id);
            r.evidence = Some(out.action.evidence);
            r.latency_ms = out.latency_ms;
            r.token_usage = Some(out.action.token_usage);
            r.memory_version = Some(out.memory_version);
            r.warnings = out.warnings;
        }
        Err(e) => {
            r.status = if e.is_unparseable() {
                ItemStatus::Unparseable
            } else {
                ItemStatus::Error
            };
            r.error = Some(format!("{}: {e}", e.stage()));
        }
    }
    r
}

/// Applies `f` to every input on at most `workers` threads; output order
/// matches input order.
fn parallel_map<T: Sync, R: Send>(inputs: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..inputs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, inputs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(input) = inputs.get(i) else { break };
                let r = f(input);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
