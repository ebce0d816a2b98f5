//! Token-distribution and completion backends.
//!
//! A [`Provider`] answers two questions about a text context: what the
//! next-token distribution is, and what a temperature sample continuing it
//! looks like (with per-token top-K log-probabilities). Two implementations
//! ship: [`ScenarioProvider`] replays a scripted JSON trie and is fully
//! deterministic; [`HttpProvider`] talks to a completions-style inference
//! server.

mod http;
mod scenario;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::HttpProvider;
pub use scenario::{ScenarioProvider, SCENARIO_FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::uncertainty::{top_two_probs, TokenDistribution, TokenLogprob};

/// One generated token together with the top of the distribution it was
/// drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEvent {
    pub token_id: u32,
    pub token_text: String,
    pub logprob: f64,
    /// Rank-ordered top entries at this position; includes the token itself.
    pub alternatives: Vec<TokenLogprob>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub end_of_sequence: bool,
}

impl TokenEvent {
    /// Event for `chosen` drawn from `dist`.
    pub fn from_distribution(chosen: &TokenLogprob, dist: &TokenDistribution) -> Self {
        Self {
            token_id: chosen.token_id,
            token_text: chosen.token_text.clone(),
            logprob: chosen.logprob,
            alternatives: dist.entries().to_vec(),
            end_of_sequence: false,
        }
    }

    /// `p(top1) - p(top2)` at this position.
    ///
    /// A single alternative is accepted only when it carries (almost) all
    /// the mass, in which case the second probability is zero.
    pub fn top_gap(&self) -> Result<f64> {
        match self.alternatives.len() {
            0 => Err(Error::CapabilityMissing(format!(
                "token {:?} carries no alternatives",
                self.token_text
            ))),
            1 if (self.alternatives[0].prob() - 1.0).abs() > 1e-6 => {
                Err(Error::CapabilityMissing(format!(
                    "token {:?} carries only its top-1 alternative",
                    self.token_text
                )))
            }
            _ => {
                let (a, b) = top_two_probs(&self.alternatives);
                Ok((a - b).clamp(0.0, 1.0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    MaxTokens,
    EndOfSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub events: Vec<TokenEvent>,
    pub finish_reason: FinishReason,
    pub full_text: String,
}

impl Completion {
    /// Applies stop strings and the token budget to a raw event stream.
    ///
    /// Generation halts at the earliest stop-string occurrence, which is
    /// cut out of the text together with everything after it. The token
    /// containing the start of the stop string keeps only its prefix.
    pub fn from_events(
        events: impl IntoIterator<Item = TokenEvent>,
        stop: &[String],
        max_tokens: usize,
        natural_end: FinishReason,
    ) -> Self {
        let mut kept: Vec<TokenEvent> = Vec::new();
        let mut text = String::new();
        for event in events {
            if event.end_of_sequence {
                return Self::finish(kept, text, FinishReason::EndOfSequence);
            }
            if kept.len() == max_tokens {
                return Self::finish(kept, text, FinishReason::MaxTokens);
            }
            let before = text.len();
            text.push_str(&event.token_text);
            let cut = earliest_stop(&text, stop, before);
            kept.push(event);
            if let Some(cut) = cut {
                truncate_events(&mut kept, cut);
                text.truncate(cut);
                return Self::finish(kept, text, FinishReason::Stop);
            }
        }
        Self::finish(kept, text, natural_end)
    }

    fn finish(events: Vec<TokenEvent>, full_text: String, finish_reason: FinishReason) -> Self {
        Self {
            events,
            finish_reason,
            full_text,
        }
    }
}

/// Drops or shortens trailing events so their texts total `len` bytes.
fn truncate_events(events: &mut Vec<TokenEvent>, len: usize) {
    let mut total = 0;
    let mut keep = 0;
    for event in events.iter_mut() {
        if total >= len {
            break;
        }
        let room = len - total;
        if event.token_text.len() > room {
            event.token_text.truncate(room);
        }
        total += event.token_text.len();
        keep += 1;
    }
    events.truncate(keep);
    events.retain(|e| !e.token_text.is_empty());
}

/// Earliest byte offset of any stop string that ends after `new_from`.
pub(crate) fn earliest_stop(text: &str, stop: &[String], new_from: usize) -> Option<usize> {
    stop.iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| {
            // only occurrences overlapping the newly appended region
            let window = new_from.saturating_sub(s.len() - 1);
            let window = floor_char_boundary(text, window);
            text[window..].find(s.as_str()).map(|i| window + i)
        })
        .min()
}

pub(crate) fn floor_char_boundary(s: &str, mut idx: usize) -> usize {
    idx = idx.min(s.len());
    while !s.is_char_boundary(idx) {
        idx -= 1;
    }
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest<'a> {
    pub context: &'a str,
    pub temperature: f64,
    pub stop: &'a [String],
    pub max_tokens: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Scenario,
    Http,
}

/// Which backend produced a result; written into every trace header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderIdentity {
    pub kind: ProviderKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub vocab_size: usize,
}

pub trait Provider: Send + Sync {
    fn identity(&self) -> ProviderIdentity;

    /// Next-token distribution after `context`.
    fn next_distribution(&self, context: &str) -> Result<TokenDistribution>;

    /// Whether an entry denotes end-of-sequence.
    fn is_end_of_sequence(&self, _entry: &TokenLogprob) -> bool {
        false
    }

    /// Argmax token after `context`, ties broken by lowest id.
    fn greedy_token(&self, context: &str) -> Result<TokenEvent> {
        let dist = self.next_distribution(context)?;
        Ok(self.greedy_from(&dist))
    }

    /// Argmax event of an already fetched distribution.
    fn greedy_from(&self, dist: &TokenDistribution) -> TokenEvent {
        let top = dist.top();
        let mut event = TokenEvent::from_distribution(top, dist);
        event.end_of_sequence = self.is_end_of_sequence(top);
        if event.end_of_sequence {
            event.token_text.clear();
        }
        event
    }

    /// A temperature sample continuing `request.context`. Every event must
    /// carry at least its top-2 alternatives.
    fn sample_completion(&self, request: &SampleRequest<'_>) -> Result<Completion>;
}

pub(crate) fn require_context(context: &str) -> Result<()> {
    if context.is_empty() {
        Err(Error::InvalidConfiguration("empty context".into()))
    } else {
        Ok(())
    }
}

pub(crate) fn require_sampling(request: &SampleRequest<'_>) -> Result<()> {
    require_context(request.context)?;
    if request.max_tokens == 0 {
        return Err(Error::InvalidConfiguration("max_tokens must be >= 1".into()));
    }
    if request.temperature.is_nan() || request.temperature <= 0.0 {
        return Err(Error::InvalidConfiguration(format!(
            "temperature must be > 0, got {}",
            request.temperature
        )));
    }
    Ok(())
}

/// Backend selection and connection parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<PathBuf>,
    pub top_k_logprobs: usize,
    pub vocab_size: usize,
    #[serde(with = "duration_secs")]
    pub request_timeout: Duration,
    pub retry_limit: u32,
    /// Bearer token; never serialised.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Scenario,
            endpoint: None,
            model_name: None,
            scenario_path: None,
            top_k_logprobs: 5,
            vocab_size: 32_000,
            request_timeout: Duration::from_secs(60),
            retry_limit: 2,
            api_key: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        match (self.kind, &self.endpoint) {
            (ProviderKind::Http, None) => return bad("http provider requires an endpoint".into()),
            (ProviderKind::Scenario, Some(_)) => {
                return bad("endpoint is only valid for the http provider".into())
            }
            _ => {}
        }
        if self.kind == ProviderKind::Scenario && self.scenario_path.is_none() {
            return bad("scenario provider requires a scenario file".into());
        }
        if self.top_k_logprobs < 2 {
            return bad(format!("top_k_logprobs must be >= 2, got {}", self.top_k_logprobs));
        }
        if self.vocab_size < self.top_k_logprobs {
            return bad(format!(
                "vocab_size {} smaller than top_k_logprobs {}",
                self.vocab_size, self.top_k_logprobs
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Provider>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Scenario => {
                let path = self.scenario_path.as_ref().expect("validated");
                Box::new(ScenarioProvider::from_path(path)?)
            }
            ProviderKind::Http => Box::new(HttpProvider::new(self.clone())?),
        })
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(text: &str) -> TokenEvent {
        TokenEvent {
            token_id: 1,
            token_text: text.into(),
            logprob: 0.0,
            alternatives: vec![TokenLogprob::new(1, text, 0.0)],
            end_of_sequence: false,
        }
    }

    #[test]
    fn stop_truncates_before_stop_string() {
        let events = ["a", "b\n", "\nc", "d"].map(ev);
        let c = Completion::from_events(events, &["\n\n".to_string()], 100, FinishReason::EndOfSequence);
        assert_eq!(c.finish_reason, FinishReason::Stop);
        assert_eq!(c.full_text, "ab");
        let rebuilt: String = c.events.iter().map(|e| e.token_text.as_str()).collect();
        assert_eq!(rebuilt, c.full_text);
    }

    #[test]
    fn budget_and_natural_end() {
        let events = ["a", "b", "c", "d", "e"].map(ev);
        let c = Completion::from_events(events.clone(), &[], 4, FinishReason::EndOfSequence);
        assert_eq!(c.events.len(), 4);
        assert_eq!(c.finish_reason, FinishReason::MaxTokens);
        let c = Completion::from_events(events, &[], 10, FinishReason::EndOfSequence);
        assert_eq!(c.finish_reason, FinishReason::EndOfSequence);
        assert_eq!(c.full_text, "abcde");
    }

    #[test]
    fn exact_budget_then_eos_is_end_of_sequence() {
        let mut eos = ev("");
        eos.end_of_sequence = true;
        let c = Completion::from_events(vec![ev("a"), eos], &[], 1, FinishReason::EndOfSequence);
        assert_eq!(c.finish_reason, FinishReason::EndOfSequence);
    }

    #[test]
    fn top_gap_requirements() {
        let mut e = ev("x");
        assert_eq!(e.top_gap().unwrap(), 1.0);
        e.alternatives = vec![TokenLogprob::new(1, "x", 0.6f64.ln())];
        assert!(matches!(e.top_gap(), Err(Error::CapabilityMissing(_))));
        e.alternatives.push(TokenLogprob::new(2, "y", 0.3f64.ln()));
        assert!((e.top_gap().unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = ProviderConfig::default();
        assert!(c.validate().is_err());
        c.scenario_path = Some("x.json".into());
        assert!(c.validate().is_ok());
        c.kind = ProviderKind::Http;
        assert!(c.validate().is_err());
        c.endpoint = Some("http://localhost:8000/v1/completions".into());
        assert!(c.validate().is_ok());
        c.top_k_logprobs = 1;
        assert!(c.validate().is_err());
        c.top_k_logprobs = 50;
        c.vocab_size = 10;
        assert!(c.validate().is_err());
    }
}
