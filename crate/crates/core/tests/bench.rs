use std::path::{Path, PathBuf};
use std::process::Command;

use uncert_cot::bench::{
    load_problems, run_benchmark, sweep, BenchOptions, CanonicalExecutor, EvalStatus, ExecRequest,
    ExecStatus, Executor, SubprocessExecutor,
};
use uncert_cot::trace::read_trace;
use uncert_cot::{default_few_shot, EngineConfig, Error, Mode, ScenarioProvider};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn toy() -> (Vec<uncert_cot::bench::Problem>, ScenarioProvider, CanonicalExecutor) {
    let problems = load_problems(fixture("fixtures/datasets/toy.jsonl")).unwrap();
    let provider = ScenarioProvider::from_path(fixture("fixtures/scenarios/toy.json")).unwrap();
    let executor = CanonicalExecutor::from_problems(&problems);
    (problems, provider, executor)
}

fn config(mode: Mode, tau: f64) -> EngineConfig {
    EngineConfig {
        mode,
        tau,
        ..EngineConfig::default()
    }
}

fn python() -> Option<&'static str> {
    Command::new("python3")
        .arg("--version")
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|_| "python3")
}

fn stub_runner(mode: &str) -> Vec<String> {
    vec![
        "python3".into(),
        fixture("tests/support/stub_runner.py").display().to_string(),
        mode.into(),
    ]
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn load_problems_in_order() {
    let problems = load_problems(fixture("fixtures/datasets/toy.jsonl")).unwrap();
    let ids: Vec<_> = problems.iter().map(|p| p.task_id.as_str()).collect();
    assert_eq!(ids, ["toy/0", "toy/1", "toy/2", "toy/3", "toy/4"]);
    assert_eq!(problems[3].entry_point, "second_largest");
}

#[test]
fn load_problems_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(
        &path,
        "{\"task_id\":\"a\",\"prompt\":\"p\",\"test\":\"t\",\"entry_point\":\"e\"}\n\n{\"task_id\":\"b\",\"prompt\":\"p\",\"test\":\"t\"}\n",
    )
    .unwrap();
    match load_problems(&path) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("entry_point"));
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    std::fs::write(
        &path,
        "{\"task_id\":\"a\",\"prompt\":\"p\",\"test\":\"t\",\"entry_point\":\"e\"}\n{\"task_id\":\"a\",\"prompt\":\"q\",\"test\":\"t\",\"entry_point\":\"e\"}\n",
    )
    .unwrap();
    assert!(matches!(load_problems(&path), Err(Error::DuplicateTask { line: 2, .. })));
    std::fs::write(&path, "").unwrap();
    assert!(load_problems(&path).unwrap().is_empty());
}

#[test]
fn greedy_and_uncert_pass_rates() {
    let (problems, provider, executor) = toy();
    let ex = default_few_shot();
    let dir = tempfile::tempdir().unwrap();
    let greedy = run_benchmark(
        &problems,
        &config(Mode::Greedy, 0.25),
        &ex,
        &provider,
        &executor,
        &BenchOptions::new(dir.path().join("greedy")),
    )
    .unwrap();
    assert_eq!((greedy.summary.passed, greedy.summary.total), (3, 5));
    assert_eq!(greedy.summary.pass_rate, 0.6);
    let statuses: Vec<_> = greedy.summary.per_problem.iter().map(|o| o.status).collect();
    assert_eq!(
        statuses,
        [EvalStatus::Pass, EvalStatus::Pass, EvalStatus::Pass, EvalStatus::Fail, EvalStatus::Fail]
    );

    let uncert = run_benchmark(
        &problems,
        &config(Mode::Uncert, 0.25),
        &ex,
        &provider,
        &executor,
        &BenchOptions::new(dir.path().join("uncert")),
    )
    .unwrap();
    assert_eq!(uncert.summary.pass_rate, 0.8);

    let out = dir.path().join("uncert");
    let summary: serde_json::Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["pass_rate"], 0.8);
    assert_eq!(summary["config"]["tau"], 0.25);
    let csv = read(&out.join("outcomes.csv"));
    assert!(csv.starts_with("task_id,status,detail,trace_path\n"));
    assert_eq!(csv.lines().count(), 6);
    let stored = read_trace(out.join("traces/toy_3.jsonl")).unwrap();
    assert!(stored.trace.lines.iter().any(|l| l.cot_invoked));
}

#[test]
fn generation_errors_count_as_failures() {
    let (mut problems, provider, _) = toy();
    problems[1].prompt = "def not_scripted():\n".into();
    let executor = CanonicalExecutor::from_problems(&problems);
    let dir = tempfile::tempdir().unwrap();
    let report = run_benchmark(
        &problems,
        &config(Mode::Greedy, 0.25),
        &default_few_shot(),
        &provider,
        &executor,
        &BenchOptions::new(dir.path()),
    )
    .unwrap();
    assert_eq!(report.summary.per_problem[1].status, EvalStatus::GenError);
    assert_eq!((report.summary.passed, report.summary.total), (2, 5));
    let stored = read_trace(dir.path().join("traces/toy_1.jsonl")).unwrap();
    assert!(stored.footer.unwrap().error.unwrap().contains("scenario"));
}

#[test]
fn empty_dataset_and_missing_runner() {
    let (problems, provider, executor) = toy();
    let dir = tempfile::tempdir().unwrap();
    let opts = BenchOptions::new(dir.path().join("out"));
    let cfg = config(Mode::Greedy, 0.25);
    assert!(matches!(
        run_benchmark(&[], &cfg, &default_few_shot(), &provider, &executor, &opts),
        Err(Error::EmptyDataset)
    ));
    let missing = SubprocessExecutor::new(vec!["/nonexistent/runner".into()]);
    assert!(matches!(
        run_benchmark(&problems, &cfg, &default_few_shot(), &provider, &missing, &opts),
        Err(Error::RunnerUnavailable(_))
    ));
    // nothing was generated before the failure
    assert!(!dir.path().join("out").exists());
}

#[test]
fn parallelism_does_not_change_results() {
    let (problems, provider, executor) = toy();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, parallelism: usize| {
        let out = dir.path().join(name);
        run_benchmark(
            &problems,
            &config(Mode::Uncert, 0.0),
            &default_few_shot(),
            &provider,
            &executor,
            &BenchOptions {
                parallelism,
                ..BenchOptions::new(&out)
            },
        )
        .unwrap();
        out
    };
    let a = run("a", 1);
    let b = run("b", 4);
    for f in ["summary.json", "outcomes.csv", "traces/toy_0.jsonl", "traces/toy_3.jsonl"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs");
    }
}

#[test]
fn sweep_rows() {
    let (problems, provider, executor) = toy();
    let dir = tempfile::tempdir().unwrap();
    let report = sweep(
        &[0.0, 0.25, 1.0, 1.0],
        &problems,
        &config(Mode::Uncert, 0.25),
        &default_few_shot(),
        &provider,
        &executor,
        &BenchOptions::new(dir.path()),
    )
    .unwrap();
    let rates: Vec<_> = report.rows.iter().map(|r| r.pass_rate).collect();
    assert_eq!(rates, [0.8, 0.8, 0.6, 0.6]);
    let csv = read(&dir.path().join("sweep.csv"));
    assert_eq!(csv.lines().next().unwrap(), "tau,pass_rate,passed,total");
    assert_eq!(csv.lines().count(), 5);
    assert!(dir.path().join("sweep.json").exists());
    assert!(dir.path().join("tau-0-0/summary.json").exists());
    assert!(sweep(&[], &problems, &config(Mode::Uncert, 0.25), &default_few_shot(), &provider, &executor, &BenchOptions::new(dir.path())).is_err());
    assert!(sweep(&[1.5], &problems, &config(Mode::Uncert, 0.25), &default_few_shot(), &provider, &executor, &BenchOptions::new(dir.path())).is_err());
}

#[test]
fn subprocess_executor_against_stub_runner() {
    if python().is_none() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let ex = SubprocessExecutor::new(stub_runner("normal"));
    ex.check_available().unwrap();
    let req = |solution: &str, timeout_s: f64| ExecRequest {
        solution_code: solution.into(),
        test_code: "def check(f):\n    assert f(2) == 4\n".into(),
        entry_point: "sq".into(),
        timeout_s,
    };
    assert_eq!(ex.execute(&req("def sq(x):\n    return x * x\n", 5.0)).unwrap().status, ExecStatus::Pass);
    assert_eq!(ex.execute(&req("def sq(x):\n    return x + 1\n", 5.0)).unwrap().status, ExecStatus::Fail);
    assert_eq!(ex.execute(&req("def sq(x):\n    raise ValueError()\n", 5.0)).unwrap().status, ExecStatus::Error);
    let slow = ex.execute(&req("def sq(x):\n    while True: pass\n", 1.0)).unwrap();
    assert_eq!(slow.status, ExecStatus::Timeout);
}

#[test]
fn misbehaving_runners() {
    if python().is_none() {
        return;
    }
    for mode in ["bad-handshake", "old-protocol"] {
        let ex = SubprocessExecutor::new(stub_runner(mode));
        assert!(matches!(ex.check_available(), Err(Error::RunnerUnavailable(_))), "{mode}");
    }
    let garbage = SubprocessExecutor::new(stub_runner("garbage"));
    garbage.check_available().unwrap();
    let req = ExecRequest {
        solution_code: "x = 1\n".into(),
        test_code: "def check(f):\n    pass\n".into(),
        entry_point: "x".into(),
        timeout_s: 1.0,
    };
    assert!(matches!(garbage.execute(&req), Err(Error::RunnerProtocol(_))));
}

#[test]
fn toy_benchmark_through_real_execution() {
    if python().is_none() {
        return;
    }
    let (problems, provider, _) = toy();
    let ex = SubprocessExecutor::new(stub_runner("normal"));
    let dir = tempfile::tempdir().unwrap();
    for (mode, tau, expected) in [(Mode::Greedy, 0.25, 0.6), (Mode::Uncert, 0.25, 0.8)] {
        let report = run_benchmark(
            &problems,
            &config(mode, tau),
            &default_few_shot(),
            &provider,
            &ex,
            &BenchOptions {
                parallelism: 2,
                ..BenchOptions::new(dir.path().join(format!("{mode:?}")))
            },
        )
        .unwrap();
        assert_eq!(report.summary.pass_rate, expected, "{mode:?}");
    }
}
