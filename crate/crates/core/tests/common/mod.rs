#![allow(dead_code)]

pub mod fake_server;

use std::path::{Path, PathBuf};

use epimem_core::harness::{load_manifest, BenchmarkItem};
use epimem_core::memory::EpisodicMemory;
use epimem_core::perception::Query;
use epimem_core::transcript::{RawCue, SourceKind, Transcript};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn manifest() -> Vec<BenchmarkItem> {
    load_manifest(&fixtures().join("manifest.jsonl")).expect("fixture manifest loads")
}

const WORDS: &[&str] = &[
    "bowl", "food", "mix", "taste", "engine", "tire", "guitar", "chord", "river", "trail", "canvas",
    "brush", "knight", "pawn", "goal", "keeper", "oven", "dough", "lens", "comet", "the", "and", "then",
    "but", "problem", "slowly", "again", "Alice", "Bob",
];

fn words(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), n).prop_map(|w| w.join(" "))
}

/// Transcripts of 1..=500 lines with random durations and gaps (some
/// above the segmentation threshold).
pub fn transcript_strategy(max_lines: usize) -> impl Strategy<Value = Transcript> {
    prop::collection::vec((0u32..120, 5u32..60, words(1..=12)), 1..=max_lines).prop_map(|rows| {
        let mut t = 0.0;
        let cues = rows
            .into_iter()
            .map(|(gap, len, text)| {
                t += f64::from(gap) / 10.0;
                let cue = RawCue { start_s: t, end_s: t + f64::from(len) / 10.0, text };
                t = cue.end_s;
                cue
            })
            .collect();
        Transcript::from_cues(cues, SourceKind::Subtitle)
    })
}

pub fn query_strategy() -> impl Strategy<Value = Query> {
    (words(1..=8), prop::collection::vec(words(1..=4), 2..=5))
        .prop_map(|(text, options)| Query::new(format!("Why {text}?"), &options).expect("valid query"))
}

/// `n` values drawn from a fixed-seed runner, the same on every run.
pub fn sample<S: Strategy>(strategy: S, n: usize) -> Vec<S::Value> {
    let mut runner = TestRunner::deterministic();
    (0..n)
        .map(|_| strategy.new_tree(&mut runner).expect("strategy draws").current())
        .collect()
}

/// Line ranges must be contiguous, non-overlapping and cover `[1, n]`.
pub fn partition_violation(memory: &EpisodicMemory, n: usize) -> Option<String> {
    let mut next = 1;
    for ep in &memory.episodes {
        let [a, b] = ep.line_range;
        if a != next || b < a {
            return Some(format!("episode {} has lines {a}..{b}, expected to start at {next}", ep.id));
        }
        next = b + 1;
    }
    (next != n + 1).then(|| format!("ranges end at {}, transcript has {n} lines", next - 1))
}

/// `next` must equal `prev` plus exactly one appended note and version + 1.
pub fn append_only_violation(prev: &EpisodicMemory, next: &EpisodicMemory) -> Option<String> {
    if next.version != prev.version + 1 {
        return Some(format!("version {} -> {}", prev.version, next.version));
    }
    if next.episodes.len() != prev.episodes.len() || next.source_digest != prev.source_digest {
        return Some("episode list or source changed".into());
    }
    let mut added = 0;
    for (a, b) in prev.episodes.iter().zip(&next.episodes) {
        let mut a_core = a.clone();
        let mut b_core = b.clone();
        a_core.reflections.clear();
        b_core.reflections.clear();
        if a_core != b_core {
            return Some(format!("episode {} changed", a.id));
        }
        if !b.reflections.starts_with(&a.reflections) {
            return Some(format!("notes of episode {} rewritten", a.id));
        }
        added += b.reflections.len() - a.reflections.len();
    }
    (added != 1).then(|| format!("{added} notes appended"))
}
