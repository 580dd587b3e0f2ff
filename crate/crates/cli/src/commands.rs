use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use epimem_core::backend::{BackendError, ChatBackend, HttpBackend, ImageSource, ReferenceBackend};
use epimem_core::harness::{
    ensure_memory, evaluate, frame_options, load_manifest, memory_token_stats, write_atomic, Backends, EvalOptions,
    MemoryStore, PipelineError, RunReport,
};
use epimem_core::memory::{build_memory, load_memory, reflect, reflection_target, save_memory, EpisodicMemory, MemoryError};
use epimem_core::perception::{grab_command, label_for, perceive, AnswerOption, PerceptionError, PerceptionResult, Query};
use epimem_core::reasoning::{act, assemble_evidence, ReasoningError};
use epimem_core::transcript::{load_transcript, Transcript, TranscriptError};
use log::{info, warn};

use crate::config::Settings;
use crate::{Command, Failure, GlobalArgs};

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Subtitle (.srt, .vtt) or caption (.jsonl) file
    input: PathBuf,
    /// Output path (default: `<input>.memory.json`)
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Video duration in seconds; every cue must end within it
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    /// Subtitle or caption file of the video
    #[arg(long)]
    transcript: PathBuf,
    /// Memory file (default: `<transcript>.memory.json`)
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(short, long, required_unless_present = "interactive")]
    question: Option<String>,
    /// One option as `A=text`; repeat in label order
    #[arg(short, long = "options", value_name = "L=TEXT")]
    options: Vec<String>,
    /// Do not append a reflection note to the memory
    #[arg(long)]
    no_reflect: bool,
    /// Read questions from stdin until EOF, keeping reflected memory between them
    #[arg(long)]
    interactive: bool,
    /// Build the memory when the memory file does not exist
    #[arg(long)]
    build_on_demand: bool,
    /// Video file to cut frames from with ffmpeg when frames are missing
    #[arg(long)]
    video: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL manifest, one benchmark item per line
    manifest: PathBuf,
    /// Write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Saved report of a baseline run; adds a delta table
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Leave failed items out of accuracy and exit non-zero if any failed
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    no_reflect: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Subtitle or caption file
    #[arg(required_unless_present = "report")]
    input: Option<PathBuf>,
    /// Memory file (default: `<input>.memory.json`, built in memory if absent)
    #[arg(long)]
    memory: Option<PathBuf>,
    /// Render a saved eval report instead
    #[arg(long, conflicts_with = "input")]
    report: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

pub fn run(global: &GlobalArgs, command: Command) -> Result<(), Failure> {
    let settings = Settings::resolve(global)?;
    info!(
        "evidence {}; manager {}; reasoner {}",
        settings.evidence,
        role_name(&settings.manager, settings.reference),
        role_name(&settings.reasoner, settings.reference)
    );
    match command {
        Command::BuildMemory(a) => build_cmd(&settings, global.dry_run, a),
        Command::Ask(a) => ask_cmd(&settings, global.dry_run, a),
        Command::Eval(a) => eval_cmd(&settings, global.dry_run, a),
        Command::Stats(a) => stats_cmd(&settings, a),
    }
}

fn role_name(cfg: &Option<epimem_core::backend::HttpConfig>, reference: bool) -> String {
    match cfg {
        Some(c) => format!("{} at {}", c.model, c.endpoint),
        None if reference => "reference".into(),
        None => "unset".into(),
    }
}

fn http(cfg: &Option<epimem_core::backend::HttpConfig>, role: &str) -> Result<Box<dyn ChatBackend>, Failure> {
    let cfg = cfg
        .clone()
        .ok_or_else(|| Failure::usage(format!("no {role} endpoint configured; set one or pass --reference")))?
        .with_env_key();
    Ok(Box::new(HttpBackend::new(cfg).map_err(|e| Failure::usage(format!("{role}: {e}")))?))
}

/// Manager backend; dry runs always use the reference rules.
fn manager(s: &Settings, dry_run: bool) -> Result<Box<dyn ChatBackend>, Failure> {
    if s.reference || dry_run {
        Ok(Box::new(ReferenceBackend::text()))
    } else {
        http(&s.manager, "manager")
    }
}

fn reasoner(s: &Settings) -> Result<Box<dyn ChatBackend>, Failure> {
    if s.reference {
        Ok(Box::new(ReferenceBackend::multimodal()))
    } else {
        http(&s.reasoner, "reasoner")
    }
}

fn read_transcript(path: &Path, duration: Option<f64>) -> Result<Transcript, Failure> {
    let t = load_transcript(path).map_err(|e| match e {
        TranscriptError::Io { .. } => Failure::input(e).at("input"),
        e => Failure::input(format!("{}: {e}", path.display())).at("input"),
    })?;
    match duration {
        Some(d) => t.with_duration(d).map_err(|e| Failure::input(e).at("input")),
        None => Ok(t),
    }
}

fn default_memory_path(input: &Path) -> PathBuf {
    input.with_extension("memory.json")
}

fn memory_failure(e: MemoryError, stage: &'static str) -> Failure {
    match e {
        MemoryError::Backend { .. } => Failure::backend(e).at(stage),
        e => Failure::input(e).at(stage),
    }
}

fn perception_failure(e: PerceptionError) -> Failure {
    match e {
        PerceptionError::Backend(_) => Failure::backend(e).at("perception"),
        e => Failure::input(e).at("perception"),
    }
}

fn action_failure(e: ReasoningError) -> Failure {
    match e {
        ReasoningError::Backend(BackendError::CapabilityMismatch { .. }) => Failure::usage(e).at("action"),
        ReasoningError::Backend(_) | ReasoningError::UnparseableAnswer { .. } => Failure::backend(e).at("action"),
        e => Failure::input(e).at("action"),
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let stage = e.stage();
    if e.is_backend() || e.is_unparseable() {
        Failure::backend(e).at(stage)
    } else {
        Failure::input(e).at(stage)
    }
}

fn build_cmd(s: &Settings, dry_run: bool, a: BuildArgs) -> Result<(), Failure> {
    let t = read_transcript(&a.input, a.duration)?;
    let mgr = manager(s, dry_run)?;
    let out = build_memory(&t, mgr.as_ref(), &s.pipeline.templates, &s.pipeline.memory)
        .map_err(|e| memory_failure(e, "memory"))?;
    for w in &out.warnings {
        warn!("{w}");
    }
    if dry_run {
        print!("{}", out.memory.to_json());
        return Ok(());
    }
    let path = a.out.unwrap_or_else(|| default_memory_path(&a.input));
    write_atomic(&path, &save_memory(&out.memory))
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
    let stats = memory_token_stats(&t, &out.memory);
    println!(
        "wrote {}: {} episodes, transcript {} tokens, memory {} tokens, reduction {}",
        path.display(),
        out.memory.episodes.len(),
        stats.transcript_tokens,
        stats.memory_tokens,
        stats.reduction_pct.map_or_else(|| "n/a".to_string(), |r| format!("{r:.1}%"))
    );
    Ok(())
}

/// `["A=x", "B=y"]` into labelled options; labels must run A, B, …
pub fn parse_options(raw: &[String]) -> Result<Vec<AnswerOption>, Failure> {
    raw.iter()
        .enumerate()
        .map(|(i, r)| {
            let (label, text) = r
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("option {r:?} must look like A=text")))?;
            let label = label.trim().to_string();
            let expected = label_for(i).unwrap_or_default();
            if label != expected {
                return Err(Failure::usage(format!(
                    "unknown option label {label:?} (expected {expected:?}; labels run A, B, … in order)"
                )));
            }
            Ok(AnswerOption { label, text: text.trim().to_string() })
        })
        .collect()
}

fn obtain_memory(
    s: &Settings,
    mgr: &dyn ChatBackend,
    t: &Transcript,
    path: &Path,
    build_on_demand: bool,
    save: bool,
) -> Result<EpisodicMemory, Failure> {
    if path.exists() {
        let bytes = std::fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let m = load_memory(&bytes).map_err(|e| Failure::input(format!("{}: {e}", path.display())).at("memory"))?;
        m.check_source(t).map_err(|e| memory_failure(e, "memory"))?;
        return Ok(m);
    }
    if !build_on_demand {
        return Err(Failure::input(format!(
            "no memory at {}; run build-memory first or pass --build-on-demand",
            path.display()
        ))
        .at("memory"));
    }
    let out = build_memory(t, mgr, &s.pipeline.templates, &s.pipeline.memory).map_err(|e| memory_failure(e, "memory"))?;
    for w in &out.warnings {
        warn!("{w}");
    }
    if save {
        write_atomic(path, &save_memory(&out.memory))
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(out.memory)
}

struct Session<'a> {
    s: &'a Settings,
    dry_run: bool,
    reflect: bool,
    transcript: Transcript,
    memory: EpisodicMemory,
    memory_path: PathBuf,
    manager: Box<dyn ChatBackend>,
    reasoner: Option<Box<dyn ChatBackend>>,
    video: Option<PathBuf>,
}

impl Session<'_> {
    fn ask(&mut self, query: &Query, out: &mut dyn Write) -> Result<(), Failure> {
        let perception = perceive(
            query,
            &self.transcript,
            &self.memory,
            self.manager.as_ref(),
            &self.s.pipeline.templates,
            &self.s.pipeline.perception,
        )
        .map_err(perception_failure)?;
        for w in &perception.warnings {
            warn!("{w}");
        }
        let assemble = |frames| {
            assemble_evidence(
                &self.s.evidence,
                query,
                &self.transcript,
                &self.memory,
                Some(&perception),
                &self.s.pipeline.templates,
                frames,
            )
            .map_err(action_failure)
        };
        let uri_frames = epimem_core::reasoning::FrameOptions {
            inline: false,
            ..self.s.pipeline.frames.clone()
        };
        let Some(reasoner) = self.reasoner.as_deref() else {
            let request = assemble(&uri_frames)?;
            let _ = write!(out, "{}", request.render_text());
            let _ = writeln!(out, "{}", spans_line(&perception));
            return Ok(());
        };
        if let Some(video) = &self.video {
            extract_frames(video, &assemble(&uri_frames)?)?;
        }
        let request = assemble(&frame_options(&self.s.pipeline.frames, reasoner))?;
        let result = act(query, &request, &self.s.evidence, reasoner).map_err(action_failure)?;
        let chosen = query.option(&result.answer_id).map_or("", |o| o.text.as_str());
        let _ = writeln!(out, "Answer: ({}) {chosen}", result.answer_id);
        let _ = writeln!(out, "Evidence: {}", result.evidence);
        let _ = writeln!(out, "{}", spans_line(&perception));

        if !self.reflect {
            let _ = writeln!(out, "Memory: version {} (reflection off)", self.memory.version);
            return Ok(());
        }
        let spans = perception.intervals();
        let target = reflection_target(&self.memory, &spans);
        let updated = reflect(
            query,
            &result.answer_id,
            &result.evidence,
            &self.memory,
            &spans,
            self.manager.as_ref(),
            &self.s.pipeline.templates,
            &self.s.pipeline.memory,
        )
        .map_err(|e| memory_failure(e, "reflection"))?;
        write_atomic(&self.memory_path, &save_memory(&updated))
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", self.memory_path.display())))?;
        self.memory = updated;
        let _ = writeln!(out, "Memory: version {} (note added to episode {target})", self.memory.version);
        Ok(())
    }
}

fn spans_line(p: &PerceptionResult) -> String {
    let spans: Vec<String> = p
        .spans
        .iter()
        .map(|s| {
            let lines: Vec<String> = s.line_indices.iter().map(usize::to_string).collect();
            format!("{:.1}–{:.1} (lines {})", s.start_s, s.end_s, lines.join(","))
        })
        .collect();
    let fallback = if p.fallback { " [no relevant lines; whole video]" } else { "" };
    format!("Spans: {}{fallback}", spans.join("; "))
}

/// Runs ffmpeg for every frame file the request points to that is missing.
fn extract_frames(video: &Path, request: &epimem_core::backend::ChatRequest) -> Result<(), Failure> {
    for image in request.images() {
        let ImageSource::Uri { uri } = &image.source else { continue };
        let path = PathBuf::from(uri.strip_prefix("file://").unwrap_or(uri));
        if path.exists() {
            continue;
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
        }
        let grab = epimem_core::perception::FrameGrab { timestamp_s: image.timestamp_s, image_path: path };
        let cmd = grab_command(video, &grab);
        info!("{cmd}");
        let status = std::process::Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| Failure::input(format!("cannot run ffmpeg: {e}")).at("frames"))?;
        if !status.success() {
            return Err(Failure::input(format!("frame extraction failed: {cmd}")).at("frames"));
        }
    }
    Ok(())
}

fn ask_cmd(s: &Settings, dry_run: bool, a: AskArgs) -> Result<(), Failure> {
    let first = match &a.question {
        Some(q) => {
            let options = parse_options(&a.options)?;
            Some(Query::with_options(q.clone(), options).map_err(|e| Failure::usage(e))?)
        }
        None => None,
    };
    let transcript = read_transcript(&a.transcript, a.duration)?;
    let mgr = manager(s, dry_run)?;
    let memory_path = a.memory.clone().unwrap_or_else(|| default_memory_path(&a.transcript));
    let memory = obtain_memory(s, mgr.as_ref(), &transcript, &memory_path, a.build_on_demand || dry_run, !dry_run)?;
    let mut session = Session {
        s,
        dry_run,
        reflect: !a.no_reflect && !dry_run,
        transcript,
        memory,
        memory_path,
        manager: mgr,
        reasoner: if dry_run { None } else { Some(reasoner(s)?) },
        video: a.video.clone(),
    };
    let stdout = std::io::stdout();
    if let Some(q) = first {
        session.ask(&q, &mut stdout.lock())?;
    }
    if a.interactive {
        interactive(&mut session, &mut std::io::stdin().lock(), &mut stdout.lock());
    }
    Ok(())
}

/// Question on one line, then `A=…` option lines, then a blank line.
/// `quit` or end of input stops.
fn interactive(session: &mut Session<'_>, input: &mut dyn BufRead, out: &mut dyn Write) {
    let mut lines = input.lines().map_while(Result::ok);
    loop {
        eprint!("question> ");
        let Some(question) = lines.next() else { break };
        let question = question.trim().to_string();
        if question.is_empty() {
            continue;
        }
        if question == "quit" || question == "exit" {
            break;
        }
        let mut raw = Vec::new();
        loop {
            eprint!("option {}> ", label_for(raw.len()).unwrap_or_default());
            match lines.next() {
                Some(l) if !l.trim().is_empty() => raw.push(l.trim().to_string()),
                _ => break,
            }
        }
        let query = parse_options(&raw).and_then(|o| Query::with_options(question, o).map_err(Failure::usage));
        let result = query.and_then(|q| session.ask(&q, out));
        if let Err(f) = result {
            eprintln!("error{}: {}", f.stage.map(|s| format!(" [{s}]")).unwrap_or_default(), f.message);
        }
        let _ = out.flush();
    }
    if session.dry_run {
        info!("dry run: memory left unchanged");
    }
}

fn eval_cmd(s: &Settings, dry_run: bool, a: EvalArgs) -> Result<(), Failure> {
    let items = load_manifest(&a.manifest).map_err(|e| Failure::input(e).at("input"))?;
    let mut opts = s.pipeline.clone();
    opts.reflect = !a.no_reflect && !dry_run;
    let mgr = manager(s, dry_run)?;
    if dry_run {
        let store = MemoryStore::in_memory();
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        for item in &items {
            let t = epimem_core::harness::load_item_transcript(item).map_err(pipeline_failure)?;
            let (m, _) = ensure_memory(&item.video_id, &t, mgr.as_ref(), &store, &opts).map_err(pipeline_failure)?;
            let p = perceive(&item.query, &t, &m, mgr.as_ref(), &opts.templates, &opts.perception)
                .map_err(perception_failure)?;
            let frames = epimem_core::reasoning::FrameOptions { inline: false, ..opts.frames.clone() };
            let req = assemble_evidence(&s.evidence, &item.query, &t, &m, Some(&p), &opts.templates, &frames)
                .map_err(action_failure)?;
            let _ = writeln!(out, "=== {} ({}) ===", item.question_id, item.video_id);
            let _ = write!(out, "{}", req.render_text());
        }
        return Ok(());
    }
    let rsn = reasoner(s)?;
    let store = match &s.memory_dir {
        Some(d) => MemoryStore::on_disk(d),
        None => MemoryStore::in_memory(),
    };
    let backends = Backends { manager: mgr.as_ref(), reasoner: rsn.as_ref() };
    let eval = EvalOptions { workers: s.workers, strict: a.strict };
    let mut report = evaluate(&items, &s.evidence, backends, &store, &opts, &eval).map_err(Failure::input)?;
    if let Some(path) = &a.compare {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let baseline = RunReport::from_json(&text)
            .map_err(|e| Failure::input(format!("{}: not a report: {e}", path.display())))?;
        report.compare_with(&baseline);
    }
    if let Some(path) = &a.out {
        write_atomic(path, report.to_json().as_bytes())
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{}", report.render_table());
    for item in report.items.iter().filter(|i| i.error.is_some()) {
        warn!("{}: {}", item.question_id, item.error.as_deref().unwrap_or_default());
    }
    if a.strict && report.errors > 0 {
        return Err(Failure::input(format!("{} item(s) failed", report.errors)));
    }
    Ok(())
}

fn stats_cmd(s: &Settings, a: StatsArgs) -> Result<(), Failure> {
    if let Some(path) = &a.report {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let report = RunReport::from_json(&text)
            .map_err(|e| Failure::input(format!("{}: not a report: {e}", path.display())))?;
        print!("{}", report.render_table());
        return Ok(());
    }
    let input = a.input.as_deref().expect("clap requires input without --report");
    let t = read_transcript(input, None)?;
    let path = a.memory.clone().unwrap_or_else(|| default_memory_path(input));
    let mgr = manager(s, !path.exists())?;
    let m = obtain_memory(s, mgr.as_ref(), &t, &path, true, false)?;
    let stats = memory_token_stats(&t, &m);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
        return Ok(());
    }
    println!("transcript: {} lines, {} tokens", t.len(), stats.transcript_tokens);
    println!("memory: {} episodes, version {}, {} tokens", m.episodes.len(), m.version, stats.memory_tokens);
    println!(
        "reduction: {}",
        stats.reduction_pct.map_or_else(|| "n/a".to_string(), |r| format!("{r:.1}%"))
    );
    Ok(())
}
