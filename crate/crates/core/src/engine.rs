//! The per-line decoding loop.
//!
//! For every new code line the engine greedily emits indentation, fetches
//! the distribution of the first non-indentation token, scores it, and then
//! either decodes the line greedily or runs a reasoning step
//! ([`crate::cot`]) and appends the chosen reasoning comments and code line.
//! Every decision is recorded in a [`LineRecord`].

use serde::{Deserialize, Serialize};

use crate::cot::{
    build_cot_prompt, sample_candidates, score_whole_completion, select_candidate, CotCandidate,
    CotConfig, FewShotExample,
};
use crate::error::{Error, Result};
use crate::provider::{
    earliest_stop, Provider, ProviderIdentity, SampleRequest, TokenEvent,
};
use crate::segmentation::{is_indentation_token, LineCursor};
use crate::trace::{DecodeTrace, TraceHeader, TRACE_SCHEMA_VERSION};
use crate::uncertainty::{gate, measure, Measure, TokenDistribution, TruncationMode, UncertaintyScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Reason only where uncertainty exceeds the threshold.
    #[default]
    Uncert,
    /// Plain greedy decoding.
    Greedy,
    /// Reason at every line.
    AlwaysCot,
    /// Sample whole solutions and keep the most confident one.
    FullCotDecoding,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "uncert" => Ok(Mode::Uncert),
            "greedy" => Ok(Mode::Greedy),
            "always_cot" => Ok(Mode::AlwaysCot),
            "full_cot_decoding" | "cot_decoding" => Ok(Mode::FullCotDecoding),
            other => Err(Error::InvalidConfiguration(format!("unknown mode {other:?}"))),
        }
    }
}

pub fn default_stop_strings() -> Vec<String> {
    ["\nclass ", "\ndef ", "\nif __name__"]
        .map(String::from)
        .to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub measure: Measure,
    pub tau: f64,
    pub truncation_mode: TruncationMode,
    pub cot: CotConfig,
    pub mode: Mode,
    pub max_lines: usize,
    pub max_total_tokens: usize,
    pub max_line_tokens: usize,
    pub stop_strings: Vec<String>,
    /// Finish when a non-blank line would start at column zero.
    pub stop_on_dedent: bool,
    pub seed: u64,
    pub strip_reasoning_from_output: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::for_measure(Measure::Entropy)
    }
}

impl EngineConfig {
    pub fn for_measure(measure: Measure) -> Self {
        Self {
            measure,
            tau: measure.default_tau(),
            truncation_mode: TruncationMode::default(),
            cot: CotConfig::default(),
            mode: Mode::Uncert,
            max_lines: 64,
            max_total_tokens: 1024,
            max_line_tokens: 128,
            stop_strings: default_stop_strings(),
            stop_on_dedent: true,
            seed: 0,
            strip_reasoning_from_output: false,
        }
    }

    pub fn validate(&self, examples: &[FewShotExample]) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidConfiguration(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        for (name, v) in [
            ("max_lines", self.max_lines),
            ("max_total_tokens", self.max_total_tokens),
            ("max_line_tokens", self.max_line_tokens),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfiguration(format!("{name} must be >= 1")));
            }
        }
        if self.mode != Mode::Greedy {
            self.cot.validate(examples)?;
        }
        Ok(())
    }
}

/// Why a whole generation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationFinish {
    Stop,
    EndOfSequence,
    MaxLines,
    MaxTotalTokens,
}

/// Audit record of one line decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub line_index: usize,
    /// Byte length of the context at the measurement point.
    pub measurement_context_length: usize,
    pub distribution: TokenDistribution,
    pub uncertainty: UncertaintyScore,
    pub gated: bool,
    pub cot_invoked: bool,
    pub candidates: Vec<CotCandidate>,
    pub selected_index: Option<usize>,
    /// Everything appended to the context for this line.
    pub emitted_text: String,
    /// Bytes of `emitted_text` that are reasoning (removed when stripping).
    pub reasoning_prefix_len: usize,
    /// What this line contributed to the final code.
    pub output_text: String,
    pub fallback_used: bool,
    /// The line hit `max_line_tokens` before its newline.
    pub truncated: bool,
    pub token_count: usize,
}

impl LineRecord {
    fn finalize_output(&mut self, strip_reasoning: bool) {
        let cut = if strip_reasoning {
            self.reasoning_prefix_len.min(self.emitted_text.len())
        } else {
            0
        };
        self.output_text = self.emitted_text[cut..].to_string();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub code: String,
    pub trace: DecodeTrace,
    pub finish_reason: GenerationFinish,
}

/// A generation aborted by a provider error; the trace up to the failure is kept.
#[derive(Debug, thiserror::Error)]
#[error("generation aborted after {} line(s): {error}", partial.trace.lines.len())]
pub struct GenerationFailure {
    #[source]
    pub error: Error,
    pub partial: Box<GenerationResult>,
}

/// How a greedily decoded line ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineEnd {
    Newline,
    /// A stop string completed; `GreedyLine::stop_at` holds the cut.
    Stop,
    EndOfSequence,
    /// `max_line_tokens` ran out before a newline.
    LineBudget,
    TotalBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineLimits<'a> {
    pub max_line_tokens: usize,
    /// Tokens still available to the whole generation.
    pub remaining_total_tokens: usize,
    pub stop_strings: &'a [String],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyLine {
    /// Emitted text, cut before a stop string when one completed.
    pub text: String,
    pub events: Vec<TokenEvent>,
    pub end: LineEnd,
    /// Byte offset of the stop string within `generated + text` (before cutting).
    pub stop_at: Option<usize>,
}

/// Emits argmax tokens after `prompt + generated` until a newline, a stop
/// string, end-of-sequence, or a budget. Stop strings are searched in the
/// generated text only, never in the prompt.
pub fn generate_greedy_line(
    provider: &dyn Provider,
    prompt: &str,
    generated: &str,
    first: Option<TokenDistribution>,
    limits: &LineLimits<'_>,
) -> Result<GreedyLine> {
    let mut context = format!("{prompt}{generated}");
    let line_start = generated.len();
    let mut pending = first;
    let mut events: Vec<TokenEvent> = Vec::new();
    let mut end = LineEnd::LineBudget;
    let mut stop_at = None;
    while events.len() < limits.max_line_tokens {
        if events.len() >= limits.remaining_total_tokens {
            end = LineEnd::TotalBudget;
            break;
        }
        let dist = match pending.take() {
            Some(d) => d,
            None => provider.next_distribution(&context)?,
        };
        let event = provider.greedy_from(&dist);
        if event.end_of_sequence {
            end = LineEnd::EndOfSequence;
            break;
        }
        let before = context.len() - prompt.len();
        context.push_str(&event.token_text);
        let has_newline = event.token_text.contains('\n');
        events.push(event);
        if let Some(cut) = earliest_stop(&context[prompt.len()..], limits.stop_strings, before) {
            stop_at = Some(cut);
            end = LineEnd::Stop;
            break;
        }
        if has_newline {
            end = LineEnd::Newline;
            break;
        }
    }
    let mut text = context[prompt.len() + line_start..].to_string();
    if let Some(cut) = stop_at {
        text.truncate(cut.saturating_sub(line_start));
    }
    Ok(GreedyLine {
        text,
        events,
        end,
        stop_at,
    })
}

struct Session<'a> {
    provider: &'a dyn Provider,
    config: &'a EngineConfig,
    examples: &'a [FewShotExample],
    prompt_len: usize,
    context: String,
    cursor: LineCursor,
    records: Vec<LineRecord>,
    total_tokens: usize,
}

enum Step {
    Continue,
    Finish(GenerationFinish),
}

impl<'a> Session<'a> {
    fn generated(&self) -> &str {
        &self.context[self.prompt_len..]
    }

    fn emit(&mut self, text: &str) {
        self.context.push_str(text);
        self.cursor = self.cursor.advance(text);
    }

    /// Cuts the generated text at `cut` and trims records to match.
    fn truncate_generated(&mut self, cut: usize) {
        self.context.truncate(self.prompt_len + cut);
        let mut start = 0;
        self.records.retain_mut(|record| {
            let this = start;
            start += record.emitted_text.len();
            if this >= cut {
                return false;
            }
            record.emitted_text.truncate(cut - this);
            true
        });
        self.cursor = LineCursor::after(&self.context);
    }

    fn step(&mut self) -> Result<Step> {
        let cfg = self.config;
        let line_start = self.context.len();
        let mut tokens = 0;

        let mut dist = self.provider.next_distribution(&self.context)?;
        while self.cursor.at_line_start
            && tokens < cfg.max_line_tokens
            && !self.provider.is_end_of_sequence(dist.top())
            && is_indentation_token(&dist.top().token_text)
        {
            let text = dist.top().token_text.clone();
            self.emit(&text);
            tokens += 1;
            dist = self.provider.next_distribution(&self.context)?;
        }

        let top = dist.top();
        if cfg.stop_on_dedent
            && self.context.len() > self.prompt_len
            && self.cursor.at_line_start
            && self.cursor.pending_whitespace.is_empty()
            && !self.provider.is_end_of_sequence(top)
            && !top.token_text.starts_with(char::is_whitespace)
        {
            // a new top-level statement ends the function body
            return Ok(Step::Finish(GenerationFinish::Stop));
        }

        let measurement_context_length = self.context.len();
        let score = measure(&dist, cfg.measure, cfg.truncation_mode)?;
        let gated = gate(&score, cfg.tau);
        let cot_invoked = match cfg.mode {
            Mode::Uncert => gated,
            Mode::AlwaysCot => true,
            Mode::Greedy | Mode::FullCotDecoding => false,
        };

        let mut record = LineRecord {
            line_index: self.records.len(),
            measurement_context_length,
            distribution: dist.clone(),
            uncertainty: score,
            gated,
            cot_invoked,
            candidates: Vec::new(),
            selected_index: None,
            emitted_text: String::new(),
            reasoning_prefix_len: 0,
            output_text: String::new(),
            fallback_used: false,
            truncated: false,
            token_count: 0,
        };

        let mut greedy_dist = Some(dist);
        if cot_invoked {
            let candidates = sample_candidates(
                self.provider,
                &self.context,
                self.examples,
                &cfg.cot,
                &cfg.stop_strings,
                cfg.seed,
            )?;
            match select_candidate(&candidates) {
                Ok(chosen) => {
                    let c = &candidates[chosen];
                    let indent = self.context.len() - line_start;
                    record.reasoning_prefix_len = if c.reasoning.is_empty() {
                        0
                    } else {
                        indent + c.text.len() - c.code_line.len()
                    };
                    record.selected_index = Some(chosen);
                    tokens += c.token_count;
                    let text = c.text.clone();
                    self.emit(&text);
                    greedy_dist = None;
                }
                Err(Error::AllDegenerate(_)) => record.fallback_used = true,
                Err(e) => return Err(e),
            }
            record.candidates = candidates;
        }

        let mut finish = None;
        let new_from = line_start - self.prompt_len;
        if let Some(first) = greedy_dist {
            let generated = self.generated().to_string();
            let prompt = &self.context[..self.prompt_len];
            let line = generate_greedy_line(
                self.provider,
                prompt,
                &generated,
                Some(first),
                &LineLimits {
                    max_line_tokens: cfg.max_line_tokens.saturating_sub(tokens).max(1),
                    remaining_total_tokens: cfg
                        .max_total_tokens
                        .saturating_sub(self.total_tokens + tokens),
                    stop_strings: &cfg.stop_strings,
                },
            )?;
            tokens += line.events.len();
            let emitted: String = line.events.iter().map(|e| e.token_text.as_str()).collect();
            self.emit(&emitted);
            match line.end {
                LineEnd::EndOfSequence => finish = Some(GenerationFinish::EndOfSequence),
                LineEnd::TotalBudget => finish = Some(GenerationFinish::MaxTotalTokens),
                LineEnd::LineBudget => record.truncated = true,
                LineEnd::Newline | LineEnd::Stop => {}
            }
        }

        record.emitted_text = self.context[line_start..].to_string();
        record.token_count = tokens;
        self.total_tokens += tokens;
        self.records.push(record);

        let search_from = new_from;
        if let Some(cut) = earliest_stop(self.generated(), &cfg.stop_strings, search_from) {
            self.truncate_generated(cut);
            return Ok(Step::Finish(GenerationFinish::Stop));
        }
        if let Some(f) = finish {
            return Ok(Step::Finish(f));
        }
        Ok(Step::Continue)
    }

    fn run(&mut self) -> Result<GenerationFinish> {
        loop {
            if self.records.len() >= self.config.max_lines {
                return Ok(GenerationFinish::MaxLines);
            }
            if self.total_tokens >= self.config.max_total_tokens {
                return Ok(GenerationFinish::MaxTotalTokens);
            }
            if let Step::Finish(f) = self.step()? {
                return Ok(f);
            }
        }
    }

    fn into_result(mut self, prompt: &str, finish_reason: GenerationFinish) -> GenerationResult {
        let strip = self.config.strip_reasoning_from_output;
        for r in &mut self.records {
            r.finalize_output(strip);
        }
        let code = self.records.iter().map(|r| r.output_text.as_str()).collect();
        GenerationResult {
            code,
            trace: DecodeTrace {
                header: header(self.provider.identity(), self.config, prompt),
                lines: self.records,
            },
            finish_reason,
        }
    }
}

fn header(provider: ProviderIdentity, config: &EngineConfig, prompt: &str) -> TraceHeader {
    TraceHeader {
        schema_version: TRACE_SCHEMA_VERSION,
        config: config.clone(),
        provider,
        prompt: prompt.to_string(),
    }
}

fn empty_result(
    provider: &dyn Provider,
    config: &EngineConfig,
    prompt: &str,
    finish_reason: GenerationFinish,
) -> GenerationResult {
    GenerationResult {
        code: String::new(),
        trace: DecodeTrace {
            header: header(provider.identity(), config, prompt),
            lines: Vec::new(),
        },
        finish_reason,
    }
}

/// Runs one generation session for `prompt`.
pub fn generate(
    provider: &dyn Provider,
    prompt: &str,
    config: &EngineConfig,
    examples: &[FewShotExample],
) -> Result<GenerationResult, GenerationFailure> {
    let fail = |error: Error| GenerationFailure {
        error,
        partial: Box::new(empty_result(provider, config, prompt, GenerationFinish::Stop)),
    };
    if prompt.is_empty() {
        return Err(fail(Error::InvalidConfiguration("empty prompt".into())));
    }
    config.validate(examples).map_err(fail)?;
    if config.mode == Mode::FullCotDecoding {
        return full_cot_decoding(provider, prompt, config, examples);
    }

    let mut session = Session {
        provider,
        config,
        examples,
        prompt_len: prompt.len(),
        context: prompt.to_string(),
        cursor: LineCursor::after(prompt),
        records: Vec::new(),
        total_tokens: 0,
    };
    match session.run() {
        Ok(finish) => Ok(session.into_result(prompt, finish)),
        Err(error) => Err(GenerationFailure {
            error,
            partial: Box::new(session.into_result(prompt, GenerationFinish::Stop)),
        }),
    }
}

/// Drops whole lines whose first non-blank characters are the comment prefix.
fn strip_comment_lines(text: &str, comment_prefix: &str) -> String {
    text.split_inclusive('\n')
        .filter(|line| !line.trim_start().starts_with(comment_prefix))
        .collect()
}

/// Whole-solution baseline: sample `k` complete solutions, score each code
/// body with the mean top-2 gap, return the most confident.
pub fn full_cot_decoding(
    provider: &dyn Provider,
    prompt: &str,
    config: &EngineConfig,
    examples: &[FewShotExample],
) -> Result<GenerationResult, GenerationFailure> {
    let fail = |error: Error, lines: Vec<LineRecord>| GenerationFailure {
        error,
        partial: Box::new(GenerationResult {
            code: String::new(),
            trace: DecodeTrace {
                header: header(provider.identity(), config, prompt),
                lines,
            },
            finish_reason: GenerationFinish::Stop,
        }),
    };
    let run = || -> Result<(UncertaintyScore, TokenDistribution, Vec<CotCandidate>)> {
        config.validate(examples)?;
        let dist = provider.next_distribution(prompt)?;
        let score = measure(&dist, config.measure, config.truncation_mode)?;
        let shots = &examples[..config.cot.shot_count.min(examples.len())];
        let cot_prompt = build_cot_prompt(shots, prompt);
        let candidates = (0..config.cot.k_samples)
            .map(|index| {
                let seed = config.seed.wrapping_add(index as u64);
                let completion = provider.sample_completion(&SampleRequest {
                    context: &cot_prompt,
                    temperature: config.cot.temperature,
                    stop: &config.stop_strings,
                    max_tokens: config.max_total_tokens,
                    seed,
                })?;
                score_whole_completion(index, seed, &completion, &config.cot.comment_prefix)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((score, dist, candidates))
    };
    let (score, dist, candidates) = run().map_err(|e| fail(e, Vec::new()))?;

    let mut record = LineRecord {
        line_index: 0,
        measurement_context_length: prompt.len(),
        distribution: dist,
        uncertainty: score,
        gated: gate(&score, config.tau),
        cot_invoked: true,
        candidates,
        selected_index: None,
        emitted_text: String::new(),
        reasoning_prefix_len: 0,
        output_text: String::new(),
        fallback_used: false,
        truncated: false,
        token_count: 0,
    };
    let chosen = match select_candidate(&record.candidates) {
        Ok(i) => i,
        Err(e) => return Err(fail(e, vec![record])),
    };
    let c = &record.candidates[chosen];
    let code = if config.strip_reasoning_from_output {
        strip_comment_lines(&c.text, &config.cot.comment_prefix)
    } else {
        c.text.clone()
    };
    record.emitted_text = c.text.clone();
    record.output_text = code.clone();
    record.token_count = c.token_count;
    record.selected_index = Some(chosen);
    Ok(GenerationResult {
        code,
        trace: DecodeTrace {
            header: header(provider.identity(), config, prompt),
            lines: vec![record],
        },
        finish_reason: GenerationFinish::EndOfSequence,
    })
}
