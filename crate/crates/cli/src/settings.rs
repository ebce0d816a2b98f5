//! Flag and config-file merging.
//!
//! Every flag has a config-file key of the same name with dashes replaced by
//! underscores. Flags win over the file; the file wins over built-in defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use serde::Deserialize;
use uncert_cot::bench::BenchOptions;
use uncert_cot::{
    default_few_shot, load_few_shot, EngineConfig, FewShotExample, Measure, Mode, ProviderConfig,
    ProviderKind, TruncationMode,
};

use crate::UsageError;

pub const API_KEY_ENV: &str = "UNCERT_COT_API_KEY";
pub const DEFAULT_RUNNER: &str = "python3 -m exec_runner";
pub const DEFAULT_OUT: &str = "uncert-cot-out";

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Uncertainty measure
    #[arg(long, global = true, value_parser = ["entropy", "pd"])]
    pub measure: Option<String>,
    /// Gating threshold in [0, 1]; defaults to 0.25 for entropy and 0.45 for pd
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Treatment of unseen probability mass
    #[arg(long, global = true, value_parser = ["residual-uniform", "renormalize"])]
    pub truncation: Option<String>,
    /// Candidates sampled per reasoning step
    #[arg(long, global = true)]
    pub k_samples: Option<usize>,
    /// Few-shot examples in the reasoning prompt
    #[arg(long, global = true)]
    pub shots: Option<usize>,
    /// Sampling temperature for candidates
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true, value_parser = ["uncert", "greedy", "always-cot", "full-cot-decoding"])]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Drop reasoning comments from the returned code
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub strip_reasoning: Option<bool>,
    /// JSON file of few-shot examples
    #[arg(long, global = true)]
    pub few_shot: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_lines: Option<usize>,
    #[arg(long, global = true)]
    pub max_total_tokens: Option<usize>,
    #[arg(long, global = true)]
    pub max_line_tokens: Option<usize>,

    #[arg(long, global = true, value_parser = ["scenario", "http"])]
    pub provider: Option<String>,
    /// Scripted scenario file (scenario provider)
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Completions endpoint URL (http provider)
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Vocabulary size of the served model
    #[arg(long, global = true)]
    pub vocab_size: Option<usize>,
    /// Logprob alternatives requested per token
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub request_timeout_s: Option<f64>,
    #[arg(long, global = true)]
    pub retries: Option<u32>,

    /// HumanEval-format JSONL
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Output directory for bench and sweep
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Per-problem execution timeout
    #[arg(long, global = true)]
    pub timeout_s: Option<f64>,
    /// How solutions are checked
    #[arg(long, global = true, value_parser = ["subprocess", "canonical"])]
    pub executor: Option<String>,
    /// Command line of the execution runner
    #[arg(long, global = true)]
    pub runner: Option<String>,
    /// Comma-separated thresholds for sweep
    #[arg(long, global = true, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        $(if $top.$field.is_some() { $base.$field = $top.$field; })*
    };
}

impl Settings {
    /// Reads a TOML config file; relative paths in it resolve against its directory.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut s: Settings = toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut s.few_shot, &mut s.scenario, &mut s.dataset, &mut s.out] {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = dir.join(&*p);
            }
        }
        Ok(s)
    }

    /// `self` with every value set in `top` replaced.
    pub fn overlay(mut self, top: Settings) -> Self {
        overlay!(
            self, top, measure, tau, truncation, k_samples, shots, temperature, mode, seed,
            strip_reasoning, few_shot, max_lines, max_total_tokens, max_line_tokens, provider,
            scenario, endpoint, model, vocab_size, top_k, request_timeout_s, retries, dataset,
            out, parallelism, timeout_s, executor, runner, taus
        );
        self
    }

    pub fn engine(&self) -> anyhow::Result<EngineConfig> {
        let measure: Measure = parse(self.measure.as_deref(), "entropy")?;
        let mut cfg = EngineConfig::for_measure(measure);
        if let Some(t) = &self.truncation {
            cfg.truncation_mode = match t.replace('_', "-").as_str() {
                "residual-uniform" => TruncationMode::ResidualUniform,
                "renormalize" => TruncationMode::Renormalize,
                other => return Err(UsageError(format!("unknown truncation {other:?}")).into()),
            };
        }
        cfg.mode = parse::<Mode>(self.mode.as_deref(), "uncert")?;
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.k_samples {
            cfg.cot.k_samples = v;
        }
        if let Some(v) = self.shots {
            cfg.cot.shot_count = v;
        }
        if let Some(v) = self.temperature {
            cfg.cot.temperature = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.strip_reasoning {
            cfg.strip_reasoning_from_output = v;
        }
        if let Some(v) = self.max_lines {
            cfg.max_lines = v;
        }
        if let Some(v) = self.max_total_tokens {
            cfg.max_total_tokens = v;
        }
        if let Some(v) = self.max_line_tokens {
            cfg.max_line_tokens = v;
        }
        Ok(cfg)
    }

    pub fn few_shot(&self) -> anyhow::Result<Vec<FewShotExample>> {
        match &self.few_shot {
            Some(p) => Ok(load_few_shot(p)?),
            None => Ok(default_few_shot()),
        }
    }

    pub fn provider(&self) -> anyhow::Result<ProviderConfig> {
        let kind = match self.provider.as_deref().unwrap_or("scenario") {
            "scenario" => ProviderKind::Scenario,
            "http" => ProviderKind::Http,
            other => return Err(UsageError(format!("unknown provider {other:?}")).into()),
        };
        let mut cfg = ProviderConfig {
            kind,
            endpoint: self.endpoint.clone(),
            model_name: self.model.clone(),
            scenario_path: self.scenario.clone(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            ..ProviderConfig::default()
        };
        if let Some(v) = self.vocab_size {
            cfg.vocab_size = v;
        }
        if let Some(v) = self.top_k {
            cfg.top_k_logprobs = v;
        }
        if let Some(v) = self.request_timeout_s {
            cfg.request_timeout = Duration::try_from_secs_f64(v)
                .map_err(|_| UsageError(format!("invalid request timeout {v}")))?;
        }
        if let Some(v) = self.retries {
            cfg.retry_limit = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dataset(&self) -> anyhow::Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| UsageError("--dataset is required".into()).into())
    }

    pub fn bench_options(&self) -> BenchOptions {
        let mut o = BenchOptions::new(self.out.clone().unwrap_or_else(|| DEFAULT_OUT.into()));
        if let Some(v) = self.parallelism {
            o.parallelism = v;
        }
        if let Some(v) = self.timeout_s {
            o.timeout_s = v;
        }
        o
    }

    pub fn runner(&self) -> anyhow::Result<Vec<String>> {
        let cmd: Vec<String> = self
            .runner
            .as_deref()
            .unwrap_or(DEFAULT_RUNNER)
            .split_whitespace()
            .map(String::from)
            .collect();
        if cmd.is_empty() {
            return Err(UsageError("--runner is empty".into()).into());
        }
        Ok(cmd)
    }

    pub fn taus(&self) -> Vec<f64> {
        self.taus
            .clone()
            .unwrap_or_else(|| (0..=10).map(|i| i as f64 / 10.0).collect())
    }
}

fn parse<T>(value: Option<&str>, default: &str) -> anyhow::Result<T>
where
    T: std::str::FromStr<Err = uncert_cot::Error>,
{
    Ok(value.unwrap_or(default).parse()?)
}
