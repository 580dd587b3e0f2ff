use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn epimem(dir: &Path, args: &[&str]) -> Output {
    epimem_with_stdin(dir, args, "")
}

fn epimem_with_stdin(dir: &Path, args: &[&str], stdin: &str) -> Output {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_epimem"))
        .args(args)
        .current_dir(dir)
        .env_remove("EPIMEM_REFERENCE")
        .env_remove("EPIMEM_MANAGER_ENDPOINT")
        .env_remove("EPIMEM_REASONER_ENDPOINT")
        .env_remove("EPIMEM_EVIDENCE")
        .env_remove("RUST_LOG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Temp dir holding a copy of the 90-second fixture as `v.srt`.
fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixtures().join("videos/v01.srt"), dir.path().join("v.srt")).unwrap();
    dir
}

const ASK: &[&str] = &[
    "--reference",
    "ask",
    "--transcript",
    "v.srt",
    "-q",
    "What is mixed in the bowl?",
    "-o",
    "A=salt",
    "-o",
    "B=engine oil",
];

#[test]
fn build_memory_golden() {
    let dir = workdir();
    let o = epimem(dir.path(), &["--reference", "build-memory", "v.srt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "wrote v.memory.json: 2 episodes, transcript 137 tokens, memory 80 tokens, reduction 41.6%\n"
    );
    let first = std::fs::read(dir.path().join("v.memory.json")).unwrap();
    let o = epimem(dir.path(), &["--reference", "build-memory", "v.srt", "-o", "again.json"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.path().join("again.json")).unwrap(), first);
}

#[test]
fn ask_golden_and_reflection() {
    let dir = workdir();
    assert!(epimem(dir.path(), &["--reference", "build-memory", "v.srt"]).status.success());
    let o = epimem(dir.path(), ASK);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "Answer: (A) salt\n\
         Evidence: Pepper stir salt pan then taste we gently stir.\n\
         Spans: 4.0–17.0 (lines 2,3); 24.0–37.0 (lines 6,7)\n\
         Memory: version 2 (note added to episode 0)\n"
    );
    let memory = std::fs::read_to_string(dir.path().join("v.memory.json")).unwrap();
    assert!(memory.contains("\"version\": 2"));

    let mut args = ASK.to_vec();
    args.push("--no-reflect");
    let o = epimem(dir.path(), &args);
    assert!(stdout(&o).ends_with("Memory: version 2 (reflection off)\n"));
}

#[test]
fn ask_needs_memory_unless_built_on_demand() {
    let dir = workdir();
    let o = epimem(dir.path(), ASK);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error [memory]"), "{}", stderr(&o));
    let mut args = ASK.to_vec();
    args.push("--build-on-demand");
    assert!(epimem(dir.path(), &args).status.success());
    assert!(dir.path().join("v.memory.json").exists());
}

#[test]
fn dry_run_prints_prompt_and_writes_nothing() {
    let dir = workdir();
    let mut args = vec!["--dry-run"];
    args.extend(ASK.iter().filter(|a| **a != "--reference"));
    let o = epimem(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for marker in ["### EPISODIC MEMORY (schematic+narrative)", "### TRANSCRIPT (query-related)", "### VIDEO FRAMES"] {
        assert!(out.contains(marker), "{marker} missing");
    }
    assert!(!out.contains("Answer: (A) salt"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

    let o = epimem(dir.path(), &["--dry-run", "build-memory", "v.srt"]);
    assert!(stdout(&o).contains("\"episodes\""));
    assert!(!dir.path().join("v.memory.json").exists());
}

#[test]
fn dry_run_blocks_follow_evidence_overrides() {
    let dir = workdir();
    let mut args = vec!["--dry-run", "--config", "vision=none,text=full,memory=none"];
    args.extend(ASK.iter().filter(|a| **a != "--reference"));
    let out = stdout(&epimem(dir.path(), &args));
    assert!(out.contains("### TRANSCRIPT (full)"));
    assert!(!out.contains("### EPISODIC MEMORY"));
    assert!(!out.contains("### VIDEO FRAMES"));
}

#[test]
fn usage_errors_exit_64() {
    let dir = workdir();
    let cases: [&[&str]; 5] = [
        &["--reference", "ask", "--transcript", "v.srt", "-q", "x", "-o", "A=a", "-o", "C=c"],
        &["--reference", "bogus-command"],
        &["ask", "--transcript", "v.srt", "-q", "x", "-o", "A=a", "-o", "B=b", "--build-on-demand"],
        &["--reference", "--manager-endpoint", "http://localhost:1", "build-memory", "v.srt"],
        &["--reference", "--evidence", "vision=none,text=none,memory=none", "stats", "v.srt"],
    ];
    for args in cases {
        let o = epimem(dir.path(), args);
        assert_eq!(o.status.code(), Some(64), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(epimem(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn input_errors_exit_1() {
    let dir = workdir();
    std::fs::write(dir.path().join("bad.srt"), "1\n00:00:02,500 --> 00:00:01,000\nx\n").unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let cases: [(&[&str], &str); 4] = [
        (&["--reference", "build-memory", "missing.srt"], "error [input]: cannot read missing.srt"),
        (&["--reference", "build-memory", "bad.srt"], "malformed cue #1"),
        (&["--reference", "build-memory", "v.srt", "--duration", "30"], "past the video duration"),
        (&["--reference", "eval", "empty.jsonl"], "no items"),
    ];
    for (args, message) in cases {
        let o = epimem(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).contains(message), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn unreachable_endpoint_exits_2() {
    let dir = workdir();
    std::fs::write(
        dir.path().join("epimem.toml"),
        "[manager]\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"m\"\nmax_retries = 0\n",
    )
    .unwrap();
    let o = epimem(dir.path(), &["--config", "epimem.toml", "build-memory", "v.srt"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error [memory]"), "{}", stderr(&o));
}

#[test]
fn config_file_settings() {
    let dir = workdir();
    std::fs::write(dir.path().join("c.toml"), "reference = true\nevidence = \"vision=none\"\n[memory]\nmax_lines = 3\n")
        .unwrap();
    let o = epimem(dir.path(), &["--config", "c.toml", "stats", "v.srt", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["transcript_tokens"], 137.0);

    std::fs::write(dir.path().join("typo.toml"), "refrence = true\n").unwrap();
    let o = epimem(dir.path(), &["--config", "typo.toml", "stats", "v.srt"]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn interactive_session_keeps_reflections() {
    let dir = workdir();
    let input = "What is mixed in the bowl?\nA=salt\nB=engine oil\n\nWhat grows in the soil?\nA=seeds\nB=trout\n\n";
    let o = epimem_with_stdin(
        dir.path(),
        &["--reference", "ask", "--transcript", "v.srt", "--interactive", "--build-on-demand"],
        input,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("Answer: (A) salt"));
    assert!(out.contains("Answer: (A) seeds"));
    assert!(out.contains("Memory: version 3"));
}

#[test]
fn eval_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixtures().join("manifest.jsonl");
    let manifest = manifest.to_str().unwrap();
    let run = |out: &str| {
        let o = epimem(dir.path(), &["--reference", "--workers", "2", "eval", manifest, "--out", out, "--strict"]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let table = run("a.json");
    assert_eq!(run("b.json"), table);
    assert!(table.contains("overall"));
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());

    let o = epimem(
        dir.path(),
        &["--reference", "--evidence", "vision=uniform,text=none,memory=none", "eval", manifest, "--compare", "a.json"],
    );
    assert!(stdout(&o).contains("delta"), "{}", stdout(&o));
    let o = epimem(dir.path(), &["stats", "--report", "a.json"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), table);
}
