//! The triggered reasoning step: sample `k` reasoning-plus-code continuations
//! from a few-shot prompt and keep the one whose code line the model is most
//! confident about.
//!
//! Confidence of a candidate is the mean, over the tokens of its code line,
//! of `p(top1) - p(top2)` at each position. Reasoning tokens do not count;
//! the code line's newline token does.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::{Completion, Provider, SampleRequest, TokenEvent};
use crate::segmentation::parse_sample;

const DEFAULT_FEW_SHOT: &str = include_str!("../data/few_shot.json");

/// One demonstration: requirement, reasoning comments, code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub requirement: String,
    pub reasoning: Vec<String>,
    pub code: String,
}

impl FewShotExample {
    fn validate(&self, comment_prefix: &str) -> Result<()> {
        match self
            .reasoning
            .iter()
            .find(|r| !r.trim_start().starts_with(comment_prefix))
        {
            Some(bad) => Err(Error::InvalidConfiguration(format!(
                "few-shot reasoning line {bad:?} does not start with {comment_prefix:?}"
            ))),
            None => Ok(()),
        }
    }
}

/// The two demonstrations shipped in `data/few_shot.json`.
pub fn default_few_shot() -> Vec<FewShotExample> {
    serde_json::from_str(DEFAULT_FEW_SHOT).expect("bundled few-shot file is valid")
}

pub fn load_few_shot(path: impl AsRef<Path>) -> Result<Vec<FewShotExample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CotConfig {
    pub k_samples: usize,
    pub shot_count: usize,
    pub temperature: f64,
    pub max_candidate_tokens: usize,
    pub comment_prefix: String,
}

impl Default for CotConfig {
    fn default() -> Self {
        Self {
            k_samples: 5,
            shot_count: 2,
            temperature: 0.4,
            max_candidate_tokens: 128,
            comment_prefix: "#".into(),
        }
    }
}

impl CotConfig {
    pub fn validate(&self, examples: &[FewShotExample]) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if self.k_samples == 0 {
            return bad("k_samples must be >= 1".into());
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.max_candidate_tokens == 0 {
            return bad("max_candidate_tokens must be >= 1".into());
        }
        if self.comment_prefix.is_empty() {
            return bad("comment_prefix must be non-empty".into());
        }
        if self.shot_count > examples.len() {
            return bad(format!(
                "shot_count {} exceeds the {} available few-shot examples",
                self.shot_count,
                examples.len()
            ));
        }
        examples[..self.shot_count]
            .iter()
            .try_for_each(|e| e.validate(&self.comment_prefix))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotCandidate {
    pub index: usize,
    pub seed: u64,
    pub reasoning: Vec<String>,
    pub code_line: String,
    pub token_gaps: Vec<f64>,
    /// Mean of `token_gaps`; meaningless (and ignored) when `degenerate`.
    pub confidence: f64,
    pub degenerate: bool,
    /// Completion prefix up to and including the code line.
    pub text: String,
    /// Tokens spanned by `text`.
    pub token_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CotCandidate {
    fn degenerate(index: usize, seed: u64, note: String) -> Self {
        Self {
            index,
            seed,
            reasoning: Vec::new(),
            code_line: String::new(),
            token_gaps: Vec::new(),
            confidence: 0.0,
            degenerate: true,
            text: String::new(),
            token_count: 0,
            note: Some(note),
        }
    }

    /// Selection key; degenerate candidates rank below everything.
    pub fn selection_score(&self) -> f64 {
        if self.degenerate {
            f64::NEG_INFINITY
        } else {
            self.confidence
        }
    }
}

/// Renders the demonstrations followed by the live context.
///
/// Each demonstration is its requirement, one line per reasoning comment,
/// then its code, followed by a single blank line. The live context is
/// appended verbatim, so zero demonstrations yield the context unchanged.
pub fn build_cot_prompt(examples: &[FewShotExample], problem_context: &str) -> String {
    let mut prompt = String::new();
    let push_line_block = |out: &mut String, block: &str| {
        out.push_str(block);
        if !block.ends_with('\n') {
            out.push('\n');
        }
    };
    for ex in examples {
        push_line_block(&mut prompt, &ex.requirement);
        for r in &ex.reasoning {
            push_line_block(&mut prompt, r);
        }
        push_line_block(&mut prompt, &ex.code);
        prompt.push('\n');
    }
    prompt.push_str(problem_context);
    prompt
}

/// Mean top-1/top-2 probability gap over the code tokens.
pub fn confidence(code_events: &[TokenEvent]) -> Result<f64> {
    if code_events.is_empty() {
        return Err(Error::DegenerateCandidate("no code tokens".into()));
    }
    let mut sum = 0.0;
    for e in code_events {
        sum += e.top_gap()?;
    }
    Ok(sum / code_events.len() as f64)
}

/// Events whose text overlaps the byte range `[start, end)` of the
/// concatenated completion, plus the number of events that begin before `end`.
pub(crate) fn events_in_range(events: &[TokenEvent], start: usize, end: usize) -> (Vec<TokenEvent>, usize) {
    let mut offset = 0;
    let mut overlapping = Vec::new();
    let mut spanned = 0;
    for e in events {
        let (lo, hi) = (offset, offset + e.token_text.len());
        offset = hi;
        if e.token_text.is_empty() || lo >= end {
            continue;
        }
        spanned += 1;
        if hi > start {
            overlapping.push(e.clone());
        }
    }
    (overlapping, spanned)
}

/// Parses and scores one sampled completion. Parsing failures produce a
/// degenerate candidate; a missing top-2 is a hard error.
pub fn score_completion(
    index: usize,
    seed: u64,
    completion: &Completion,
    comment_prefix: &str,
) -> Result<CotCandidate> {
    let parsed = match parse_sample(&completion.full_text, comment_prefix) {
        Ok(p) => p,
        Err(Error::DegenerateCandidate(msg)) => {
            return Ok(CotCandidate::degenerate(index, seed, msg))
        }
        Err(e) => return Err(e),
    };
    let (code_events, token_count) =
        events_in_range(&completion.events, parsed.code_start, parsed.code_end);
    let token_gaps = code_events
        .iter()
        .map(TokenEvent::top_gap)
        .collect::<Result<Vec<_>>>()?;
    let confidence = match confidence(&code_events) {
        Ok(c) => c,
        Err(Error::DegenerateCandidate(msg)) => {
            return Ok(CotCandidate::degenerate(index, seed, msg))
        }
        Err(e) => return Err(e),
    };
    Ok(CotCandidate {
        index,
        seed,
        reasoning: parsed.reasoning,
        code_line: parsed.code_line,
        token_gaps,
        confidence,
        degenerate: false,
        text: completion.full_text[..parsed.code_end].to_string(),
        token_count,
        note: None,
    })
}

/// Scores a whole sampled solution: confidence over the tokens of every
/// non-comment, non-blank line.
pub fn score_whole_completion(
    index: usize,
    seed: u64,
    completion: &Completion,
    comment_prefix: &str,
) -> Result<CotCandidate> {
    if comment_prefix.is_empty() {
        return Err(Error::InvalidConfiguration("comment prefix must be non-empty".into()));
    }
    let text = &completion.full_text;
    let mut reasoning = Vec::new();
    let mut code = String::new();
    let mut ranges = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim_start();
        if body.trim().is_empty() {
            continue;
        }
        if body.starts_with(comment_prefix) {
            reasoning.push(line.trim_end_matches('\n').to_string());
        } else {
            code.push_str(line);
            ranges.push((start, offset));
        }
    }
    if ranges.is_empty() {
        return Ok(CotCandidate::degenerate(index, seed, "no code lines".into()));
    }
    let mut code_events = Vec::new();
    let mut pos = 0;
    for e in &completion.events {
        let (lo, hi) = (pos, pos + e.token_text.len());
        pos = hi;
        if lo < hi && ranges.iter().any(|&(s, t)| lo < t && hi > s) {
            code_events.push(e.clone());
        }
    }
    let token_gaps = code_events
        .iter()
        .map(TokenEvent::top_gap)
        .collect::<Result<Vec<_>>>()?;
    let confidence = confidence(&code_events)?;
    let token_count = completion
        .events
        .iter()
        .filter(|e| !e.token_text.is_empty())
        .count();
    Ok(CotCandidate {
        index,
        seed,
        reasoning,
        code_line: code,
        token_gaps,
        confidence,
        degenerate: false,
        text: text.clone(),
        token_count,
        note: None,
    })
}

/// Index of the most confident non-degenerate candidate, lowest index on ties.
pub fn select_candidate(candidates: &[CotCandidate]) -> Result<usize> {
    let mut best: Option<&CotCandidate> = None;
    for c in candidates.iter().filter(|c| !c.degenerate) {
        if best.is_none_or(|b| c.confidence > b.confidence) {
            best = Some(c);
        }
    }
    best.map(|c| c.index)
        .ok_or(Error::AllDegenerate(candidates.len()))
}

/// Samples `k` candidates with seeds `seed..seed+k`. Requests are issued in
/// parallel; the result is ordered by index regardless of completion order.
pub fn sample_candidates(
    provider: &dyn Provider,
    problem_context: &str,
    examples: &[FewShotExample],
    config: &CotConfig,
    stop: &[String],
    seed: u64,
) -> Result<Vec<CotCandidate>> {
    let shots = &examples[..config.shot_count.min(examples.len())];
    let prompt = build_cot_prompt(shots, problem_context);
    (0..config.k_samples)
        .into_par_iter()
        .map(|index| {
            let sample_seed = seed.wrapping_add(index as u64);
            let completion = provider.sample_completion(&SampleRequest {
                context: &prompt,
                temperature: config.temperature,
                stop,
                max_tokens: config.max_candidate_tokens,
                seed: sample_seed,
            })?;
            score_completion(index, sample_seed, &completion, &config.comment_prefix)
        })
        .collect()
}

/// Samples, scores and selects in one call.
pub fn run_cot_step(
    provider: &dyn Provider,
    problem_context: &str,
    examples: &[FewShotExample],
    config: &CotConfig,
    seed: u64,
) -> Result<CotCandidate> {
    let candidates = sample_candidates(provider, problem_context, examples, config, &[], seed)?;
    let chosen = select_candidate(&candidates)?;
    Ok(candidates[chosen].clone())
}
