//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criterion 8 also runs against a live chat-completion endpoint when
//! `EPIMEM_LIVE_ENDPOINT` (and optionally `EPIMEM_LIVE_MODEL`) is set.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use common::fake_server::{scripted_model, FakeServer, Faults};
use epimem_core::backend::{ChatBackend, HttpBackend, HttpConfig, ReferenceBackend, TemplateSet};
use epimem_core::harness::{
    compute_token_stats, evaluate, frame_options, load_item_transcript, memory_token_stats, run_pipeline, Backends,
    EvalOptions, MemoryStore, PipelineOptions,
};
use epimem_core::memory::{build_memory, reflect, save_memory, EpisodicMemory, MemoryParams, MemoryView};
use epimem_core::perception::{perceive, PerceptionParams, Query};
use epimem_core::reasoning::{
    act, assemble_evidence, block_markers, ConfigError, EvidenceConfig, FrameOptions, MemoryEvidence, ReasoningError,
    ABLATION_ROWS,
};
use epimem_core::transcript::{parse_srt, parse_vtt, to_srt, to_vtt, RawCue, SourceKind, Transcript};
use epimem_core::warning::Warning;

type Outcome = Result<String, String>;

fn uri_frames() -> FrameOptions {
    FrameOptions { inline: false, ..FrameOptions::default() }
}

fn criterion_1() -> Outcome {
    // (transcript tokens, memory tokens, reported reduction %)
    let rows = [(268.4, 592.9, -120.9), (2048.2, 1290.0, 37.0), (9717.7, 2045.6, 78.9)];
    let mut got = Vec::new();
    for (t, m, reported) in rows {
        let oracle = (t - m) / t * 100.0;
        let r = compute_token_stats(t, m).reduction_pct.ok_or("no reduction")?;
        if (r - oracle).abs() > 1e-9 || (r - reported).abs() > 0.05 {
            return Err(format!("{t}/{m}: got {r:.3}, expected {reported}"));
        }
        got.push(format!("{r:.1}"));
    }
    Ok(got.join(" / "))
}

fn criterion_2() -> Outcome {
    let transcripts = common::sample(common::transcript_strategy(500), 1000);
    let backend = ReferenceBackend::text();
    let templates = TemplateSet::default();
    let params = MemoryParams::default();
    for (i, t) in transcripts.iter().enumerate() {
        let m = build_memory(t, &backend, &templates, &params)
            .map_err(|e| format!("transcript {i}: {e}"))?
            .memory;
        if let Some(v) = common::partition_violation(&m, t.len()) {
            return Err(format!("transcript {i}: {v}"));
        }
    }
    Ok("1000 transcripts, 0 violations".into())
}

/// Every artifact of one reference-mode run, serialized.
fn reference_run() -> Result<BTreeMap<String, Vec<u8>>, String> {
    let items = common::manifest();
    let manager = ReferenceBackend::text();
    let reasoner = ReferenceBackend::multimodal();
    let backends = Backends { manager: &manager, reasoner: &reasoner };
    let opts = PipelineOptions::default();
    let mut out = BTreeMap::new();

    let store = MemoryStore::in_memory();
    for item in &items {
        let r = run_pipeline(item, &EvidenceConfig::full(), backends, &store, &opts)
            .map_err(|e| format!("{}: {e}", item.question_id))?;
        out.insert(format!("perception/{}", item.question_id), serde_json::to_vec(&r.perception).unwrap());
        out.insert(format!("action/{}", item.question_id), serde_json::to_vec(&r.action).unwrap());
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = MemoryStore::on_disk(dir.path());
    let eval = EvalOptions { workers: 4, strict: false };
    let report = evaluate(&items, &EvidenceConfig::full(), backends, &store, &opts, &eval).map_err(|e| e.to_string())?;
    out.insert("report".into(), report.to_json().into_bytes());
    for entry in std::fs::read_dir(dir.path()).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        out.insert(format!("memory/{name}"), std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn criterion_3() -> Outcome {
    let items = common::manifest();
    let videos: std::collections::BTreeSet<_> = items.iter().map(|i| i.video_id.as_str()).collect();
    let longest = items.iter().map(|i| i.duration_s).fold(0.0, f64::max);
    let captions = items.iter().filter(|i| i.subtitle_path.is_none()).count();
    if videos.len() < 10 || longest < 3600.0 || captions == 0 {
        return Err("fixture set lacks the required videos".into());
    }
    let a = reference_run()?;
    let b = reference_run()?;
    if a.keys().ne(b.keys()) {
        return Err("runs produced different artifact sets".into());
    }
    if let Some((k, _)) = a.iter().find(|(k, v)| b[*k] != **v) {
        return Err(format!("{k} differs between runs"));
    }
    let memories = a.keys().filter(|k| k.starts_with("memory/")).count();
    Ok(format!("{} artifacts identical ({memories} memory files, {} videos)", a.len(), videos.len()))
}

struct StageCheck {
    clips: usize,
    answers: usize,
    unparseable: usize,
    reflections: usize,
}

fn check_stages(
    t: &Transcript,
    memory: &EpisodicMemory,
    query: &Query,
    check: &mut StageCheck,
) -> Result<(), String> {
    let manager = ReferenceBackend::text();
    let reasoner = ReferenceBackend::multimodal();
    let templates = TemplateSet::default();
    let p = perceive(query, t, memory, &manager, &templates, &PerceptionParams::default()).map_err(|e| e.to_string())?;
    let d = t.effective_duration_s();
    let ts = &p.clip.frame_timestamps_s;
    if ts.len() > 32 || ts.iter().any(|&x| !(0.0..=d).contains(&x)) {
        return Err(format!("frame timestamps {ts:?} outside [0, {d}] or over 32"));
    }
    check.clips += 1;

    let req = assemble_evidence(&EvidenceConfig::full(), query, t, memory, Some(&p), &templates, &uri_frames())
        .map_err(|e| e.to_string())?;
    let result = match act(query, &req, &EvidenceConfig::full(), &reasoner) {
        Ok(r) => r,
        Err(ReasoningError::UnparseableAnswer { .. }) => {
            check.unparseable += 1;
            return Ok(());
        }
        Err(e) => return Err(e.to_string()),
    };
    if query.option(&result.answer_id).is_none() {
        return Err(format!("answer {} is not an option label", result.answer_id));
    }
    check.answers += 1;

    let next = reflect(
        query,
        &result.answer_id,
        &result.evidence,
        memory,
        &p.intervals(),
        &manager,
        &templates,
        &MemoryParams::default(),
    )
    .map_err(|e| e.to_string())?;
    if let Some(v) = common::append_only_violation(memory, &next) {
        return Err(v);
    }
    next.validate().map_err(|e| e.to_string())?;
    check.reflections += 1;
    Ok(())
}

fn criterion_4() -> Outcome {
    let manager = ReferenceBackend::text();
    let templates = TemplateSet::default();
    let params = MemoryParams::default();
    let mut check = StageCheck { clips: 0, answers: 0, unparseable: 0, reflections: 0 };

    for item in common::manifest() {
        let t = load_item_transcript(&item).map_err(|e| e.to_string())?;
        let m = build_memory(&t, &manager, &templates, &params).map_err(|e| e.to_string())?.memory;
        check_stages(&t, &m, &item.query, &mut check).map_err(|e| format!("{}: {e}", item.question_id))?;
    }
    let transcripts = common::sample(common::transcript_strategy(500), 1000);
    let queries = common::sample(common::query_strategy(), 1000);
    for (i, (t, q)) in transcripts.iter().zip(&queries).enumerate() {
        let m = build_memory(t, &manager, &templates, &params).map_err(|e| e.to_string())?.memory;
        check_stages(t, &m, q, &mut check).map_err(|e| format!("random case {i}: {e}"))?;
    }
    Ok(format!(
        "{} clips, {} answers ({} unparseable), {} append-only reflections",
        check.clips, check.answers, check.unparseable, check.reflections
    ))
}

/// Narrative line `「id | span | role | summary | links」` without role and links.
fn strip_narrative(line: &str) -> String {
    if !line.starts_with('「') {
        return line.to_string();
    }
    let inner = line.trim_start_matches('「').trim_end_matches('」');
    let fields: Vec<&str> = inner.split(" | ").collect();
    let n = fields.len();
    format!("「{} | {} | {}」", fields[0], fields[1], fields[3..n - 1].join(" | "))
}

fn criterion_5() -> Outcome {
    let item = &common::manifest()[0];
    let t = load_item_transcript(item).map_err(|e| e.to_string())?;
    let manager = ReferenceBackend::text();
    let templates = TemplateSet::default();
    let m = build_memory(&t, &manager, &templates, &MemoryParams::default()).map_err(|e| e.to_string())?.memory;
    let p = perceive(&item.query, &t, &m, &manager, &templates, &PerceptionParams::default()).map_err(|e| e.to_string())?;

    let mut rendered = BTreeMap::new();
    for (name, config) in ABLATION_ROWS {
        let req = assemble_evidence(&config, &item.query, &t, &m, Some(&p), &templates, &uri_frames())
            .map_err(|e| format!("{name}: {e}"))?;
        let text = req.render_text();
        let got = block_markers(&text);
        let want = declared_markers(&config);
        if got != want {
            return Err(format!("{name}: blocks {got:?}, declared {want:?}"));
        }
        rendered.insert(name, (config, text));
    }

    let mut pairs = 0;
    for (a, b) in ABLATION_ROWS.iter().flat_map(|a| ABLATION_ROWS.iter().map(move |b| (a, b))) {
        let (ca, cb) = (a.1, b.1);
        if ca.memory != MemoryEvidence::Schematic
            || cb.memory != MemoryEvidence::SchematicPlusNarrative
            || ca.vision != cb.vision
            || ca.text != cb.text
        {
            continue;
        }
        let sa = &rendered[a.0].1;
        let sb = &rendered[b.0].1;
        let stripped: Vec<String> = sb.lines().map(strip_narrative).collect();
        let schematic: Vec<String> = sa.lines().map(str::to_string).collect();
        let stripped = stripped.join("\n").replace("(schematic+narrative)", "(schematic)");
        if stripped != schematic.join("\n") {
            return Err(format!("{} and {} differ beyond role/links", a.0, b.0));
        }
        pairs += 1;
    }
    let schematic = m.render(MemoryView::Schematic);
    let narrative: Vec<String> = m.render(MemoryView::Narrative).lines().map(strip_narrative).collect();
    if narrative.join("\n") != schematic.trim_end() {
        return Err("memory views differ beyond role/links".into());
    }
    if pairs == 0 {
        return Err("no schematic/narrative pair among the rows".into());
    }
    Ok(format!("10 rows match declared blocks; {pairs} schematic/narrative pair(s) differ only in role/links"))
}

fn declared_markers(c: &EvidenceConfig) -> Vec<&'static str> {
    use epimem_core::reasoning::{TextEvidence, VisionEvidence};
    let mut v = Vec::new();
    match c.memory {
        MemoryEvidence::None => {}
        MemoryEvidence::Schematic => v.push("### EPISODIC MEMORY (schematic)"),
        MemoryEvidence::SchematicPlusNarrative => v.push("### EPISODIC MEMORY (schematic+narrative)"),
    }
    match c.text {
        TextEvidence::None => {}
        TextEvidence::FullTranscript => v.push("### TRANSCRIPT (full)"),
        TextEvidence::QrTranscript => v.push("### TRANSCRIPT (query-related)"),
    }
    if c.vision != VisionEvidence::None {
        v.push("### VIDEO FRAMES");
    }
    v
}

fn criterion_6() -> Outcome {
    let dir = common::fixtures().join("corpus");
    let counts: BTreeMap<String, usize> =
        serde_json::from_slice(&std::fs::read(dir.join("cue_counts.json")).unwrap()).unwrap();
    let mut checked = 0;
    for (name, expected) in &counts {
        let bytes = std::fs::read(dir.join(name)).map_err(|e| e.to_string())?;
        let (t, again) = if name.ends_with(".srt") {
            let t = parse_srt(&bytes).map_err(|e| format!("{name}: {e}"))?;
            let again = parse_srt(to_srt(&t).as_bytes()).map_err(|e| format!("{name}: {e}"))?;
            (t, again)
        } else {
            let t = parse_vtt(&bytes).map_err(|e| format!("{name}: {e}"))?;
            let again = parse_vtt(to_vtt(&t).as_bytes()).map_err(|e| format!("{name}: {e}"))?;
            (t, again)
        };
        if t.len() != *expected || t != again {
            return Err(format!("{name} does not round-trip"));
        }
        checked += 1;
    }
    let malformed = dir.join("malformed");
    let expected: BTreeMap<String, String> =
        serde_json::from_slice(&std::fs::read(malformed.join("expected.json")).unwrap()).unwrap();
    for (name, want) in &expected {
        let bytes = std::fs::read(malformed.join(name)).unwrap();
        let r = if name.ends_with(".srt") { parse_srt(&bytes) } else { parse_vtt(&bytes) };
        let got = match r {
            Ok(_) => "Ok".to_string(),
            Err(e) => error_tag(&e),
        };
        if &got != want {
            return Err(format!("{name}: got {got}, expected {want}"));
        }
    }
    Ok(format!("{checked} files round-trip; {} malformed files rejected as specified", expected.len()))
}

fn error_tag(e: &epimem_core::transcript::TranscriptError) -> String {
    use epimem_core::transcript::TranscriptError as E;
    match e {
        E::MalformedCue { ordinal, .. } => format!("MalformedCue:{ordinal}"),
        E::EmptyFile => "EmptyFile".into(),
        E::MissingHeader => "MissingHeader".into(),
        E::InvalidUtf8 => "InvalidUtf8".into(),
        other => format!("{other:?}"),
    }
}

/// Four scenes of ten-token lines, every word unique.
fn scene_transcript(total_tokens: usize) -> Transcript {
    let lines = total_tokens / 10;
    let per_scene = lines / 4;
    let mut cues = Vec::new();
    let mut t = 0.0;
    for k in 0..lines {
        if k > 0 && k % per_scene == 0 {
            t += 8.0;
        }
        let text: Vec<String> = (0..10).map(|w| format!("w{}x{w}", k)).collect();
        cues.push(RawCue { start_s: t, end_s: t + 2.0, text: text.join(" ") });
        t += 2.5;
    }
    Transcript::from_cues(cues, SourceKind::Subtitle)
}

/// Memory tokens under the reference rules: scenes split into runs of at
/// most `max_lines` lines; each episode costs 7 framing tokens, a summary
/// of 2 + min(budget, event tokens), and max(links, 1) link tokens.
fn ratio_oracle(total_tokens: usize) -> f64 {
    let p = MemoryParams::default();
    let per_scene = total_tokens / 10 / 4;
    let mut episodes = Vec::new();
    for _ in 0..4 {
        let mut left = per_scene;
        while left > 0 {
            let n = left.min(p.max_lines);
            episodes.push(n * 10);
            left -= n;
        }
    }
    let memory: usize = episodes
        .iter()
        .enumerate()
        .map(|(k, &tokens)| 7 + 2 + tokens.min(p.summary_budget) + usize::from(k > 0).max(1))
        .sum();
    memory as f64 / total_tokens as f64
}

const COMPRESSION_GOLDEN: [(usize, f64); 3] = [(200, 0.8), (2000, 0.24), (10000, 0.208)];

fn criterion_7() -> Outcome {
    let mut ratios = Vec::new();
    for (size, golden) in COMPRESSION_GOLDEN {
        let oracle = ratio_oracle(size);
        if (oracle - golden).abs() > 1e-12 {
            return Err(format!("oracle gives {oracle} for {size}, pinned {golden}"));
        }
        let t = scene_transcript(size);
        let m = build_memory(&t, &ReferenceBackend::text(), &TemplateSet::default(), &MemoryParams::default())
            .map_err(|e| e.to_string())?
            .memory;
        let s = memory_token_stats(&t, &m);
        if s.transcript_tokens as usize != size {
            return Err(format!("transcript has {} tokens, wanted {size}", s.transcript_tokens));
        }
        let ratio = s.memory_tokens / s.transcript_tokens;
        if (ratio - golden).abs() > 1e-12 {
            return Err(format!("{size} tokens: ratio {ratio}, golden {golden}"));
        }
        ratios.push(ratio);
    }
    if !ratios.windows(2).all(|w| w[1] < w[0]) {
        return Err(format!("ratios not strictly decreasing: {ratios:?}"));
    }
    Ok(format!("ratios {:?} strictly decreasing", ratios))
}

fn has_warning(ws: &[Warning], pred: impl Fn(&Warning) -> bool) -> bool {
    ws.iter().any(pred)
}

fn end_to_end(manager: &dyn ChatBackend, reasoner: &dyn ChatBackend, config: &EvidenceConfig) -> Result<String, String> {
    let item = common::manifest().into_iter().find(|i| i.video_id == "v04").ok_or("no 5-minute fixture")?;
    let t = load_item_transcript(&item).map_err(|e| e.to_string())?;
    let templates = TemplateSet::default();
    let out = build_memory(&t, manager, &templates, &MemoryParams::default()).map_err(|e| e.to_string())?;
    let bytes = save_memory(&out.memory);
    epimem_core::memory::load_memory(&bytes).map_err(|e| format!("memory file invalid: {e}"))?;
    let p = perceive(&item.query, &t, &out.memory, manager, &templates, &PerceptionParams::default())
        .map_err(|e| e.to_string())?;
    let frames = frame_options(&uri_frames(), reasoner);
    let req = assemble_evidence(config, &item.query, &t, &out.memory, Some(&p), &templates, &frames)
        .map_err(|e| e.to_string())?;
    let r = act(&item.query, &req, config, reasoner).map_err(|e| e.to_string())?;
    Ok(r.answer_id)
}

fn criterion_8() -> Outcome {
    let text_only: EvidenceConfig = "text=qr,memory=narrative".parse().map_err(|e: ConfigError| e.to_string())?;
    let server = FakeServer::start(scripted_model(Faults::default()));
    let backend = HttpBackend::new(HttpConfig::new(&server.url, "scripted")).map_err(|e| e.to_string())?;
    let answer = end_to_end(&backend, &backend, &text_only)?;

    let t = load_item_transcript(&common::manifest()[0]).map_err(|e| e.to_string())?;
    let faulty = FakeServer::start(scripted_model(Faults { degenerate_segments: true, forward_link: true }));
    let backend = HttpBackend::new(HttpConfig::new(&faulty.url, "faulty")).map_err(|e| e.to_string())?;
    let out = build_memory(&t, &backend, &TemplateSet::default(), &MemoryParams::default()).map_err(|e| e.to_string())?;
    if !has_warning(&out.warnings, |w| matches!(w, Warning::DegenerateOutput { .. })) {
        return Err("no DegenerateOutput warning from prose segmentation".into());
    }
    if !has_warning(&out.warnings, |w| matches!(w, Warning::InvalidLink { .. })) {
        return Err("no InvalidLink warning from a forward link".into());
    }
    if let Some(v) = common::partition_violation(&out.memory, t.len()) {
        return Err(format!("repaired memory: {v}"));
    }

    let live = match std::env::var("EPIMEM_LIVE_ENDPOINT") {
        Ok(url) if !url.is_empty() => {
            let model = std::env::var("EPIMEM_LIVE_MODEL").unwrap_or_else(|_| "default".into());
            let backend = HttpBackend::new(HttpConfig::new(url, model).with_env_key()).map_err(|e| e.to_string())?;
            let a = end_to_end(&backend, &backend, &text_only).map_err(|e| format!("live endpoint: {e}"))?;
            format!("live endpoint answered ({a})")
        }
        _ => "live endpoint skipped (EPIMEM_LIVE_ENDPOINT unset)".into(),
    };
    Ok(format!("fake server answered ({answer}); repair warnings raised; {live}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("token compression math", criterion_1),
        ("memory partition property", criterion_2),
        ("reference-mode determinism", criterion_3),
        ("stage contracts", criterion_4),
        ("evidence composition", criterion_5),
        ("subtitle round-trip corpus", criterion_6),
        ("compression direction", criterion_7),
        ("endpoint smoke and repair paths", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("criterion_{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name}: {detail} [{secs:.2}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
