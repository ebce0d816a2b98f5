use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn toy_scenario() -> String {
    fixtures().join("scenarios/toy.json").display().to_string()
}

fn toy_dataset() -> String {
    fixtures().join("datasets/toy.jsonl").display().to_string()
}

fn clamp_prompt() -> String {
    let line = std::fs::read_to_string(fixtures().join("datasets/toy.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    first["prompt"].as_str().unwrap().to_string()
}

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uncert-cot"))
        .args(args)
        .current_dir(cwd)
        .env_remove("UNCERT_COT_API_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_is_deterministic_and_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let prompt = clamp_prompt();
    let scenario = toy_scenario();
    let args = [
        "generate", "--provider", "scenario", "--scenario", &scenario, "--measure", "entropy",
        "--tau", "0.0", "--seed", "7", "--prompt", &prompt,
    ];
    let a = cli(&args, dir.path());
    let b = cli(&args, dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("return max(lo, min(x, hi))"));

    let trace = dir.path().join("trace.jsonl");
    assert!(trace.exists());
    let header: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&trace).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["seed"], 7);
    assert_eq!(header["config"]["tau"], 0.0);

    let shown = cli(&["inspect", "trace.jsonl", "--tau", "0.5"], dir.path());
    assert_eq!(shown.status.code(), Some(0));
    let text = stdout(&shown);
    assert!(text.contains("gated"));
    assert!(text.contains("replay: consistent"));
    assert!(text.contains("gated at tau=0.5: []"));
}

#[test]
fn strip_reasoning_removes_comments() {
    let dir = tempfile::tempdir().unwrap();
    let prompt = clamp_prompt();
    let scenario = toy_scenario();
    let out = cli(
        &["generate", "--scenario", &scenario, "--tau", "0", "--strip-reasoning", "--prompt", &prompt],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "    return max(lo, min(x, hi))\n");
}

#[test]
fn prompt_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_uncert-cot"))
        .args(["generate", "--mode", "greedy", "--scenario", &toy_scenario(), "--prompt-file", "-"])
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(clamp_prompt().as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "    return max(lo, min(x, hi))\n");
}

#[test]
fn bench_writes_summary_with_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "bench", "--dataset", &toy_dataset(), "--scenario", &toy_scenario(), "--mode", "greedy",
            "--executor", "canonical", "--out", "run",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("pass_rate 0.600 (3/5)"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass_rate"], 0.6);
    assert_eq!(summary["config"]["mode"], "greedy");
    assert!(dir.path().join("run/outcomes.csv").exists());
    assert!(dir.path().join("run/traces/toy_0.jsonl").exists());
}

#[test]
fn sweep_writes_one_row_per_tau() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "sweep", "--taus", "0.1,0.3,0.5,0.7,0.9", "--dataset", &toy_dataset(), "--scenario",
            &toy_scenario(), "--executor", "canonical", "--out", "sw",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let rows: Vec<_> = csv.lines().collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0], "tau,pass_rate,passed,total");
    assert_eq!(rows[1], "0.1,0.8,4,5");
    assert_eq!(rows[5], "0.9,0.6,3,5");
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        format!(
            "scenario = {:?}\ndataset = {:?}\nexecutor = \"canonical\"\nmode = \"uncert\"\ntau = 1.0\nout = \"cfg-out\"\n",
            toy_scenario(),
            toy_dataset()
        ),
    )
    .unwrap();
    let from_file = cli(&["bench", "--config", "run.toml"], dir.path());
    assert_eq!(from_file.status.code(), Some(0), "{}", stderr(&from_file));
    assert!(stdout(&from_file).contains("(3/5)"));
    let overridden = cli(&["--config", "run.toml", "bench", "--tau", "0.25"], dir.path());
    assert_eq!(overridden.status.code(), Some(0), "{}", stderr(&overridden));
    assert!(stdout(&overridden).contains("(4/5)"));
    let summary = std::fs::read_to_string(dir.path().join("cfg-out/summary.json")).unwrap();
    assert!(summary.contains("\"tau\": 0.25"));

    std::fs::write(dir.path().join("bad.toml"), "tua = 0.3\n").unwrap();
    let bad = cli(&["bench", "--config", "bad.toml"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = cli(&["frobnicate"], dir.path());
    assert_eq!(unknown.status.code(), Some(1));
    assert!(stderr(&unknown).contains("Usage"));
    let flag = cli(&["bench", "--no-such-flag"], dir.path());
    assert_eq!(flag.status.code(), Some(1));
    let tau = cli(&["generate", "--tau", "1.5", "--prompt", "x", "--scenario", &toy_scenario()], dir.path());
    assert_eq!(tau.status.code(), Some(1));
    assert!(stderr(&tau).contains("tau"));
    let endpoint = cli(&["generate", "--provider", "http", "--prompt", "x"], dir.path());
    assert_eq!(endpoint.status.code(), Some(1));
    let dataset = cli(&["bench", "--scenario", &toy_scenario()], dir.path());
    assert_eq!(dataset.status.code(), Some(1));
    assert_eq!(cli(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let runner = cli(
        &[
            "bench", "--dataset", &toy_dataset(), "--scenario", &toy_scenario(), "--runner",
            "/nonexistent/exec-runner",
        ],
        dir.path(),
    );
    assert_eq!(runner.status.code(), Some(2));
    assert!(stderr(&runner).contains("runner"));

    let miss = cli(&["generate", "--scenario", &toy_scenario(), "--prompt", "def unknown():\n"], dir.path());
    assert_eq!(miss.status.code(), Some(2));
    assert!(stderr(&miss).contains("partial trace"));
    assert!(dir.path().join("trace.jsonl").exists());

    let trace = cli(&["inspect", "missing.jsonl"], dir.path());
    assert_eq!(trace.status.code(), Some(2));
}
