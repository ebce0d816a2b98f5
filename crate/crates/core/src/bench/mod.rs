//! Benchmark harness: load HumanEval-format problems, generate a solution
//! per problem, execute its tests and report the fraction that pass.

mod executor;
mod run;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use executor::{
    CanonicalExecutor, ExecRequest, ExecResponse, ExecStatus, Executor, SubprocessExecutor,
    RUNNER_PROTOCOL_VERSION,
};
pub use run::{
    run_benchmark, sweep, BenchOptions, BenchReport, SweepReport, SweepRow,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub task_id: String,
    pub prompt: String,
    #[serde(rename = "test")]
    pub test_code: String,
    pub entry_point: String,
    /// Reference body, when the dataset ships one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_solution: Option<String>,
}

/// Reads a JSONL problem file (one object per line, blank lines ignored).
pub fn load_problems(path: impl AsRef<Path>) -> Result<Vec<Problem>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n,
            message,
        };
        let problem: Problem = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        for (field, value) in [
            ("task_id", &problem.task_id),
            ("prompt", &problem.prompt),
            ("test", &problem.test_code),
            ("entry_point", &problem.entry_point),
        ] {
            if value.trim().is_empty() {
                return Err(parse_err(format!("field {field} is empty")));
            }
        }
        if !seen.insert(problem.task_id.clone()) {
            return Err(Error::DuplicateTask {
                task_id: problem.task_id,
                line: n,
            });
        }
        problems.push(problem);
    }
    Ok(problems)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Pass,
    Fail,
    Timeout,
    ExecError,
    GenError,
}

impl EvalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalStatus::Pass => "pass",
            EvalStatus::Fail => "fail",
            EvalStatus::Timeout => "timeout",
            EvalStatus::ExecError => "exec_error",
            EvalStatus::GenError => "gen_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub task_id: String,
    pub status: EvalStatus,
    pub detail: String,
    /// Relative to the run's output directory.
    pub generation_trace_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub total: usize,
    pub passed: usize,
    /// `passed / total`, one correctly rounded division.
    pub pass_rate: f64,
    pub per_problem: Vec<EvalOutcome>,
}

/// Aggregates outcomes. Anything other than `Pass` counts against the rate.
pub fn pass_rate(outcomes: Vec<EvalOutcome>) -> Result<BenchSummary> {
    if outcomes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total = outcomes.len();
    let passed = outcomes
        .iter()
        .filter(|o| o.status == EvalStatus::Pass)
        .count();
    Ok(BenchSummary {
        total,
        passed,
        pass_rate: passed as f64 / total as f64,
        per_problem: outcomes,
    })
}

/// `passed / total` written with `decimals` digits, truncated toward zero
/// using integer arithmetic.
pub fn format_pass_rate(passed: usize, total: usize, decimals: u32) -> String {
    assert!(total > 0 && passed <= total, "invalid pass count {passed}/{total}");
    let scale = 10u128.pow(decimals);
    let scaled = passed as u128 * scale / total as u128;
    if decimals == 0 {
        return scaled.to_string();
    }
    format!(
        "{}.{:0width$}",
        scaled / scale,
        scaled % scale,
        width = decimals as usize
    )
}
