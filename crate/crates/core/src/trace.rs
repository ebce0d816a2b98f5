//! Decode traces: the audit record of one generation, stored as JSON lines.
//!
//! A trace file holds one `header` record, one `line` record per decoded
//! line and a closing `result` record.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, GenerationFinish, GenerationResult, LineRecord};
use crate::error::{Error, Result};
use crate::provider::ProviderIdentity;
use crate::uncertainty::{gate, measure};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub config: EngineConfig,
    pub provider: ProviderIdentity,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub header: TraceHeader,
    pub lines: Vec<LineRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub finish_reason: GenerationFinish,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Header(TraceHeader),
    Line(LineRecord),
    Result(TraceFooter),
}

/// A trace as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrace {
    pub trace: DecodeTrace,
    /// Absent when the writer died before finishing.
    pub footer: Option<TraceFooter>,
}

/// Serialises `result` to JSON lines; `error` marks an aborted generation.
pub fn write_trace(
    path: impl AsRef<Path>,
    result: &GenerationResult,
    error: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_trace_to(&mut out, result, error).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trace_to(
    out: &mut impl Write,
    result: &GenerationResult,
    error: Option<&str>,
) -> std::io::Result<()> {
    let mut put = |record: &Record| -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")
    };
    put(&Record::Header(result.trace.header.clone()))?;
    for line in &result.trace.lines {
        put(&Record::Line(line.clone()))?;
    }
    put(&Record::Result(TraceFooter {
        finish_reason: result.finish_reason,
        code: result.code.clone(),
        error: error.map(str::to_string),
    }))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<StoredTrace> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header = None;
    let mut lines = Vec::new();
    let mut footer = None;
    for (i, raw) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let raw = raw.map_err(|e| Error::io(path, e))?;
        if raw.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&raw).map_err(|e| parse_err(n, e.to_string()))?;
        match record {
            Record::Header(h) if header.is_none() => {
                if h.schema_version != TRACE_SCHEMA_VERSION {
                    return Err(parse_err(
                        n,
                        format!("unsupported trace schema version {}", h.schema_version),
                    ));
                }
                header = Some(h);
            }
            Record::Header(_) => return Err(parse_err(n, "second header record".into())),
            _ if header.is_none() => return Err(parse_err(n, "trace must start with a header".into())),
            _ if footer.is_some() => return Err(parse_err(n, "record after the result".into())),
            Record::Line(l) => lines.push(l),
            Record::Result(f) => footer = Some(f),
        }
    }
    let header = header.ok_or_else(|| parse_err(0, "empty trace".into()))?;
    Ok(StoredTrace {
        trace: DecodeTrace { header, lines },
        footer,
    })
}

/// Per-line outcome of recomputing the gate from the stored distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedGate {
    pub line_index: usize,
    pub uncertainty: f64,
    pub gated: bool,
    pub recorded_uncertainty: f64,
    pub recorded_gated: bool,
}

impl ReplayedGate {
    pub fn agrees(&self) -> bool {
        self.gated == self.recorded_gated && (self.uncertainty - self.recorded_uncertainty).abs() <= 1e-12
    }
}

/// Recomputes every gating decision offline, at the header's threshold or `tau`.
pub fn replay_gating(trace: &DecodeTrace, tau: Option<f64>) -> Result<Vec<ReplayedGate>> {
    let cfg = &trace.header.config;
    let tau = tau.unwrap_or(cfg.tau);
    trace
        .lines
        .iter()
        .map(|line| {
            let score = measure(&line.distribution, cfg.measure, cfg.truncation_mode)?;
            Ok(ReplayedGate {
                line_index: line.line_index,
                uncertainty: score.value,
                gated: gate(&score, tau),
                recorded_uncertainty: line.uncertainty.value,
                recorded_gated: line.gated,
            })
        })
        .collect()
}

/// Human-readable table of the gating decisions in a trace.
pub fn render_table(stored: &StoredTrace) -> String {
    let trace = &stored.trace;
    let cfg = &trace.header.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "measure={} tau={} mode={:?} provider={}",
        cfg.measure, cfg.tau, cfg.mode, trace.header.provider.name
    );
    let _ = writeln!(
        out,
        "{:>4}  {:>8}  {:>5}  {:>4}  {:<28}  emitted",
        "line", "U", "gated", "sel", "confidences"
    );
    for line in &trace.lines {
        let confidences = line
            .candidates
            .iter()
            .map(|c| {
                if c.degenerate {
                    "-".to_string()
                } else {
                    format!("{:.3}", c.confidence)
                }
            })
            .collect::<Vec<_>>()
            .join(",");
        let sel = match (line.selected_index, line.fallback_used) {
            (Some(i), _) => i.to_string(),
            (None, true) => "fb".to_string(),
            (None, false) => String::new(),
        };
        let _ = writeln!(
            out,
            "{:>4}  {:>8.5}  {:>5}  {:>4}  {:<28}  {:?}",
            line.line_index,
            line.uncertainty.value,
            if line.gated { "yes" } else { "no" },
            sel,
            confidences,
            line.emitted_text
        );
    }
    if let Some(f) = &stored.footer {
        let _ = writeln!(out, "finish={:?}", f.finish_reason);
        if let Some(e) = &f.error {
            let _ = writeln!(out, "error={e}");
        }
    }
    out
}
