use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::executor::{ExecRequest, ExecStatus, Executor};
use super::{pass_rate, BenchSummary, EvalOutcome, EvalStatus, Problem};
use crate::cot::FewShotExample;
use crate::engine::{generate, EngineConfig, Mode};
use crate::error::{Error, Result};
use crate::provider::{Provider, ProviderIdentity};
use crate::trace::write_trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Worker threads; results do not depend on it.
    pub parallelism: usize,
    pub timeout_s: f64,
    pub out_dir: PathBuf,
}

impl BenchOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            parallelism: 1,
            timeout_s: 10.0,
            out_dir: out_dir.into(),
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: EngineConfig,
    pub provider: ProviderIdentity,
    pub timeout_s: f64,
    #[serde(flatten)]
    pub summary: BenchSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub pass_rate: f64,
    pub passed: usize,
    pub total: usize,
}

/// Contents of `sweep.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: EngineConfig,
    pub provider: ProviderIdentity,
    pub timeout_s: f64,
    pub rows: Vec<SweepRow>,
}

fn sanitize(task_id: &str) -> String {
    task_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Unique trace file names, in problem order.
fn trace_names(problems: &[Problem]) -> Vec<String> {
    let mut used = HashSet::new();
    problems
        .iter()
        .map(|p| {
            let base = sanitize(&p.task_id);
            let mut name = format!("{base}.jsonl");
            let mut n = 1;
            while !used.insert(name.clone()) {
                n += 1;
                name = format!("{base}-{n}.jsonl");
            }
            name
        })
        .collect()
}

fn evaluate(
    problem: &Problem,
    trace_rel: &str,
    config: &EngineConfig,
    examples: &[FewShotExample],
    provider: &dyn Provider,
    executor: &dyn Executor,
    options: &BenchOptions,
) -> EvalOutcome {
    let outcome = |status, detail: String| EvalOutcome {
        task_id: problem.task_id.clone(),
        status,
        detail,
        generation_trace_path: Some(trace_rel.to_string()),
    };
    let trace_path = options.out_dir.join(trace_rel);
    let result = match generate(provider, &problem.prompt, config, examples) {
        Ok(r) => r,
        Err(failure) => {
            let detail = failure.error.to_string();
            if let Err(e) = write_trace(&trace_path, &failure.partial, Some(&detail)) {
                log::warn!("cannot write trace for {}: {e}", problem.task_id);
            }
            return outcome(EvalStatus::GenError, detail);
        }
    };
    if let Err(e) = write_trace(&trace_path, &result, None) {
        return EvalOutcome {
            generation_trace_path: None,
            ..outcome(EvalStatus::ExecError, format!("cannot write trace: {e}"))
        };
    }
    let request = ExecRequest {
        solution_code: format!("{}{}", problem.prompt, result.code),
        test_code: problem.test_code.clone(),
        entry_point: problem.entry_point.clone(),
        timeout_s: options.timeout_s,
    };
    match executor.execute(&request) {
        Ok(r) => {
            let status = match r.status {
                ExecStatus::Pass => EvalStatus::Pass,
                ExecStatus::Fail => EvalStatus::Fail,
                ExecStatus::Timeout => EvalStatus::Timeout,
                ExecStatus::Error => EvalStatus::ExecError,
            };
            outcome(status, r.detail)
        }
        Err(e) => outcome(EvalStatus::ExecError, e.to_string()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_options(options: &BenchOptions) -> Result<()> {
    if options.parallelism == 0 {
        return Err(Error::InvalidConfiguration("parallelism must be >= 1".into()));
    }
    if options.timeout_s.is_nan() || options.timeout_s <= 0.0 {
        return Err(Error::InvalidConfiguration("timeout_s must be > 0".into()));
    }
    Ok(())
}

/// Generates and evaluates every problem, writing `summary.json`,
/// `outcomes.csv` and `traces/` under `options.out_dir`.
///
/// A failed generation is recorded as `GenError`; it never aborts the run.
pub fn run_benchmark(
    problems: &[Problem],
    config: &EngineConfig,
    examples: &[FewShotExample],
    provider: &dyn Provider,
    executor: &dyn Executor,
    options: &BenchOptions,
) -> Result<BenchReport> {
    if problems.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_options(options)?;
    config.validate(examples)?;
    executor.check_available()?;

    create_dir(&options.out_dir.join("traces"))?;
    let names = trace_names(problems);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism)
        .build()
        .map_err(|e| Error::InvalidConfiguration(format!("thread pool: {e}")))?;
    let outcomes: Vec<EvalOutcome> = pool.install(|| {
        problems
            .par_iter()
            .zip(names.par_iter())
            .map(|(problem, name)| {
                let rel = format!("traces/{name}");
                evaluate(problem, &rel, config, examples, provider, executor, options)
            })
            .collect()
    });

    let report = BenchReport {
        config: config.clone(),
        provider: provider.identity(),
        timeout_s: options.timeout_s,
        summary: pass_rate(outcomes)?,
    };
    write_json(&options.out_dir.join("summary.json"), &report)?;

    let csv_path = options.out_dir.join("outcomes.csv");
    let mut csv = csv::Writer::from_path(&csv_path)?;
    csv.write_record(["task_id", "status", "detail", "trace_path"])?;
    for o in &report.summary.per_problem {
        csv.write_record([
            o.task_id.as_str(),
            o.status.as_str(),
            o.detail.as_str(),
            o.generation_trace_path.as_deref().unwrap_or(""),
        ])?;
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(report)
}

/// Runs the benchmark once per threshold, everything else fixed. Each run
/// lands in `out_dir/tau-<index>-<tau>/`; the table goes to `sweep.csv` and
/// `sweep.json`.
pub fn sweep(
    taus: &[f64],
    problems: &[Problem],
    base_config: &EngineConfig,
    examples: &[FewShotExample],
    provider: &dyn Provider,
    executor: &dyn Executor,
    options: &BenchOptions,
) -> Result<SweepReport> {
    if taus.is_empty() {
        return Err(Error::InvalidConfiguration("sweep needs at least one tau".into()));
    }
    if let Some(bad) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidConfiguration(format!(
            "tau must lie in [0, 1], got {bad}"
        )));
    }
    if base_config.mode != Mode::Uncert {
        log::warn!("sweeping tau with mode {:?}; gating only acts in uncert mode", base_config.mode);
    }
    create_dir(&options.out_dir)?;
    let mut rows = Vec::with_capacity(taus.len());
    for (i, &tau) in taus.iter().enumerate() {
        let config = EngineConfig {
            tau,
            ..base_config.clone()
        };
        let run_options = BenchOptions {
            out_dir: options.out_dir.join(format!("tau-{i}-{tau}")),
            ..options.clone()
        };
        let report = run_benchmark(problems, &config, examples, provider, executor, &run_options)?;
        rows.push(SweepRow {
            tau,
            pass_rate: report.summary.pass_rate,
            passed: report.summary.passed,
            total: report.summary.total,
        });
    }

    let csv_path = options.out_dir.join("sweep.csv");
    let mut csv = csv::Writer::from_path(&csv_path)?;
    for row in &rows {
        csv.serialize(row)?;
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;

    let report = SweepReport {
        config: base_config.clone(),
        provider: provider.identity(),
        timeout_s: options.timeout_s,
        rows,
    };
    write_json(&options.out_dir.join("sweep.json"), &report)?;
    Ok(report)
}
