//! Test execution behind a line-delimited JSON contract.
//!
//! A runner process announces `{"runner_protocol": 1}` on its first stdout
//! line, then answers each request line on stdin with exactly one response
//! line, in order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Problem;
use crate::error::{Error, Result};

pub const RUNNER_PROTOCOL_VERSION: u32 = 1;

/// Extra time granted beyond the request's own timeout before the runner
/// itself is considered hung.
const WATCHDOG_GRACE: Duration = Duration::from_secs(5);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub solution_code: String,
    pub test_code: String,
    pub entry_point: String,
    pub timeout_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Pass,
    Fail,
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResponse {
    pub status: ExecStatus,
    #[serde(default)]
    pub detail: String,
    #[serde(default)]
    pub wall_time_s: f64,
}

pub trait Executor: Send + Sync {
    /// Fails when no request could be served.
    fn check_available(&self) -> Result<()>;

    fn execute(&self, request: &ExecRequest) -> Result<ExecResponse>;
}

struct Runner {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Runner {
    fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::RunnerUnavailable("empty runner command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::RunnerUnavailable(format!("cannot start {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        let mut runner = Runner {
            child,
            stdin,
            lines,
        };
        runner.handshake()?;
        Ok(runner)
    }

    fn handshake(&mut self) -> Result<()> {
        #[derive(Deserialize)]
        struct Hello {
            runner_protocol: u32,
        }
        let line = self
            .read_line(HANDSHAKE_TIMEOUT)
            .map_err(|e| Error::RunnerUnavailable(format!("no handshake: {e}")))?;
        let hello: Hello = serde_json::from_str(&line)
            .map_err(|e| Error::RunnerUnavailable(format!("bad handshake {line:?}: {e}")))?;
        if hello.runner_protocol != RUNNER_PROTOCOL_VERSION {
            return Err(Error::RunnerUnavailable(format!(
                "runner speaks protocol {}, expected {RUNNER_PROTOCOL_VERSION}",
                hello.runner_protocol
            )));
        }
        Ok(())
    }

    fn read_line(&self, timeout: Duration) -> std::result::Result<String, String> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(e.to_string()),
            Err(RecvTimeoutError::Timeout) => Err(format!("no response within {timeout:?}")),
            Err(RecvTimeoutError::Disconnected) => Err("runner closed its output".into()),
        }
    }

    fn exchange(&mut self, request: &ExecRequest) -> Result<ExecResponse> {
        let mut payload = serde_json::to_vec(request)?;
        payload.push(b'\n');
        self.stdin
            .write_all(&payload)
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::RunnerProtocol(format!("cannot write request: {e}")))?;
        let wait = Duration::from_secs_f64(request.timeout_s.max(0.0)) + WATCHDOG_GRACE;
        let line = self.read_line(wait).map_err(Error::RunnerProtocol)?;
        serde_json::from_str(&line)
            .map_err(|e| Error::RunnerProtocol(format!("bad response {line:?}: {e}")))
    }
}

impl Drop for Runner {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pool of runner subprocesses started from `command`; each request borrows
/// an idle runner or starts a new one. A runner that misbehaves is killed
/// and replaced.
pub struct SubprocessExecutor {
    command: Vec<String>,
    idle: Mutex<Vec<Runner>>,
}

impl SubprocessExecutor {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            idle: Mutex::new(Vec::new()),
        }
    }

    fn checkout(&self) -> Result<Runner> {
        let pooled = self.idle.lock().expect("runner pool poisoned").pop();
        match pooled {
            Some(r) => Ok(r),
            None => Runner::spawn(&self.command),
        }
    }

    fn checkin(&self, runner: Runner) {
        self.idle.lock().expect("runner pool poisoned").push(runner);
    }
}

impl std::fmt::Debug for SubprocessExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessExecutor")
            .field("command", &self.command)
            .finish_non_exhaustive()
    }
}

impl Executor for SubprocessExecutor {
    fn check_available(&self) -> Result<()> {
        let runner = Runner::spawn(&self.command)?;
        self.checkin(runner);
        Ok(())
    }

    fn execute(&self, request: &ExecRequest) -> Result<ExecResponse> {
        let mut runner = self.checkout()?;
        let response = runner.exchange(request)?;
        self.checkin(runner);
        Ok(response)
    }
}

/// Scripted stand-in for a real runner: a solution passes exactly when its
/// code lines match the problem's reference solution.
///
/// Comment lines, blank lines and trailing whitespace are ignored. Problems
/// are identified by `(entry_point, test_code)`.
#[derive(Debug, Clone, Default)]
pub struct CanonicalExecutor {
    expected: HashMap<(String, String), Vec<String>>,
}

fn code_lines(source: &str) -> Vec<String> {
    source
        .lines()
        .map(str::trim_end)
        .filter(|l| {
            let t = l.trim_start();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(str::to_string)
        .collect()
}

impl CanonicalExecutor {
    /// Problems without a canonical solution are skipped.
    pub fn from_problems(problems: &[Problem]) -> Self {
        let expected = problems
            .iter()
            .filter_map(|p| {
                let body = p.canonical_solution.as_ref()?;
                Some((
                    (p.entry_point.clone(), p.test_code.clone()),
                    code_lines(&format!("{}{}", p.prompt, body)),
                ))
            })
            .collect();
        Self { expected }
    }
}

impl Executor for CanonicalExecutor {
    fn check_available(&self) -> Result<()> {
        if self.expected.is_empty() {
            return Err(Error::RunnerUnavailable(
                "no problem carries a canonical solution".into(),
            ));
        }
        Ok(())
    }

    fn execute(&self, request: &ExecRequest) -> Result<ExecResponse> {
        let key = (request.entry_point.clone(), request.test_code.clone());
        let Some(expected) = self.expected.get(&key) else {
            return Ok(ExecResponse {
                status: ExecStatus::Error,
                detail: format!("no canonical solution for {}", request.entry_point),
                wall_time_s: 0.0,
            });
        };
        let got = code_lines(&request.solution_code);
        let (status, detail) = match got.iter().zip(expected).position(|(a, b)| a != b) {
            None if got.len() == expected.len() => (ExecStatus::Pass, String::new()),
            Some(i) => (
                ExecStatus::Fail,
                format!("code line {} differs: {:?}", i + 1, got[i]),
            ),
            None => (
                ExecStatus::Fail,
                format!("{} code lines, expected {}", got.len(), expected.len()),
            ),
        };
        Ok(ExecResponse {
            status,
            detail,
            wall_time_s: 0.0,
        })
    }
}
