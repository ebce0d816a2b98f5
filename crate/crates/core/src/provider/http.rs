//! Client for completions-style inference servers that return per-token
//! top-K log-probabilities (the legacy `/v1/completions` response shape).

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    require_context, require_sampling, Completion, FinishReason, Provider, ProviderConfig,
    ProviderIdentity, ProviderKind, SampleRequest, TokenEvent,
};
use crate::error::{Error, Result};
use crate::uncertainty::{rank_order, TokenDistribution, TokenLogprob};

/// Text used for a synthesised end-of-sequence entry.
const EOS_SENTINEL: &str = "<|end_of_sequence|>";

const EOS_TEXTS: &[&str] = &[
    EOS_SENTINEL,
    "<|endoftext|>",
    "<|EOT|>",
    "</s>",
    "<|end▁of▁sentence|>",
    "<|im_end|>",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    logprobs: usize,
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    stop_reason: Option<serde_json::Value>,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Vec<Option<BTreeMap<String, f64>>>,
}

/// Completions-endpoint backend.
///
/// Token ids are not part of the response format, so each token text gets a
/// stable 32-bit FNV-1a id; greedy ties therefore break on that hash.
#[derive(Debug)]
pub struct HttpProvider {
    config: ProviderConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
}

pub(crate) fn text_token_id(text: &str) -> u32 {
    text.bytes().fold(0x811c_9dc5u32, |h, b| {
        (h ^ u32::from(b)).wrapping_mul(0x0100_0193)
    })
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| Error::InvalidConfiguration("http provider requires an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| Error::InvalidConfiguration(format!("http client: {e}")))?;
        Ok(Self {
            config,
            endpoint,
            client,
        })
    }

    fn model(&self) -> &str {
        self.config.model_name.as_deref().unwrap_or("default")
    }

    /// Posts `body`, retrying transport failures and 429/5xx responses with
    /// the identical payload.
    fn post(&self, body: &CompletionRequest<'_>) -> Result<Choice> {
        let payload = serde_json::to_vec(body)?;
        let attempts = self.config.retry_limit + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 * u64::from(attempt)));
            }
            let mut request = self
                .client
                .post(&self.endpoint)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(payload.clone());
            if let Some(key) = &self.config.api_key {
                request = request.bearer_auth(key);
            }
            let response = match request.send() {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    log::warn!("completion request failed (attempt {}): {e}", attempt + 1);
                    continue;
                }
            };
            let status = response.status();
            if status.is_server_error() || status.as_u16() == 429 {
                last_error = format!("http status {status}");
                continue;
            }
            if !status.is_success() {
                let text = response.text().unwrap_or_default();
                return Err(Error::ProviderUnavailable {
                    attempts: attempt + 1,
                    detail: format!("http status {status}: {text}"),
                });
            }
            let parsed: CompletionResponse = match response.json() {
                Ok(p) => p,
                Err(e) => {
                    last_error = format!("malformed response: {e}");
                    continue;
                }
            };
            return parsed.choices.into_iter().next().ok_or_else(|| {
                Error::ProviderUnavailable {
                    attempts: attempt + 1,
                    detail: "response has no choices".into(),
                }
            });
        }
        Err(Error::ProviderUnavailable {
            attempts,
            detail: last_error,
        })
    }

    fn top_k(&self) -> usize {
        self.config.top_k_logprobs.max(2)
    }

    fn position_entries(&self, top: &BTreeMap<String, f64>) -> Vec<TokenLogprob> {
        let mut entries: Vec<TokenLogprob> = top
            .iter()
            .map(|(text, &lp)| TokenLogprob::new(text_token_id(text), text.clone(), lp))
            .collect();
        entries.sort_by(rank_order);
        entries
    }
}

impl Provider for HttpProvider {
    fn identity(&self) -> ProviderIdentity {
        ProviderIdentity {
            kind: ProviderKind::Http,
            name: self.endpoint.clone(),
            model: self.config.model_name.clone(),
            vocab_size: self.config.vocab_size,
        }
    }

    fn next_distribution(&self, context: &str) -> Result<TokenDistribution> {
        require_context(context)?;
        let choice = self.post(&CompletionRequest {
            model: self.model(),
            prompt: context,
            max_tokens: 1,
            temperature: 0.0,
            stop: &[],
            logprobs: self.top_k(),
            seed: 0,
        })?;
        let logprobs = choice.logprobs.unwrap_or(Logprobs {
            tokens: Vec::new(),
            token_logprobs: Vec::new(),
            top_logprobs: Vec::new(),
        });
        if logprobs.tokens.is_empty() {
            if choice.finish_reason.as_deref() == Some("stop") && choice.text.is_empty() {
                let eos = TokenLogprob::new(text_token_id(EOS_SENTINEL), EOS_SENTINEL, 0.0);
                return TokenDistribution::new(vec![eos], self.config.vocab_size);
            }
            return Err(Error::CapabilityMissing(
                "response carries no token logprobs".into(),
            ));
        }
        let top = logprobs
            .top_logprobs
            .into_iter()
            .next()
            .flatten()
            .ok_or_else(|| Error::CapabilityMissing("response carries no top_logprobs".into()))?;
        let mut entries = self.position_entries(&top);
        entries.truncate(self.config.top_k_logprobs);
        TokenDistribution::new(entries, self.config.vocab_size)
    }

    fn is_end_of_sequence(&self, entry: &TokenLogprob) -> bool {
        EOS_TEXTS.contains(&entry.token_text.as_str())
    }

    fn sample_completion(&self, request: &SampleRequest<'_>) -> Result<Completion> {
        require_sampling(request)?;
        let choice = self.post(&CompletionRequest {
            model: self.model(),
            prompt: request.context,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            stop: request.stop,
            logprobs: self.top_k(),
            seed: request.seed,
        })?;
        let natural_end = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::MaxTokens,
            Some("stop") if matches!(choice.stop_reason, Some(serde_json::Value::String(_))) => {
                FinishReason::Stop
            }
            _ => FinishReason::EndOfSequence,
        };
        let logprobs = choice.logprobs.ok_or_else(|| {
            Error::CapabilityMissing("sampled completion carries no logprobs".into())
        })?;
        let mut events = Vec::with_capacity(logprobs.tokens.len());
        for (i, text) in logprobs.tokens.iter().enumerate() {
            let top = logprobs
                .top_logprobs
                .get(i)
                .cloned()
                .flatten()
                .ok_or_else(|| {
                    Error::CapabilityMissing(format!("no top_logprobs for token {i}"))
                })?;
            let mut alternatives = self.position_entries(&top);
            let logprob = logprobs
                .token_logprobs
                .get(i)
                .copied()
                .flatten()
                .or_else(|| top.get(text).copied())
                .unwrap_or(f64::NEG_INFINITY);
            if !alternatives.iter().any(|a| &a.token_text == text) {
                alternatives.push(TokenLogprob::new(text_token_id(text), text.clone(), logprob));
                alternatives.sort_by(rank_order);
            }
            let event = TokenEvent {
                token_id: text_token_id(text),
                token_text: text.clone(),
                logprob,
                alternatives,
                end_of_sequence: EOS_TEXTS.contains(&text.as_str()),
            };
            // confidence is undefined without a top-2 gap
            event.top_gap()?;
            events.push(event);
        }
        let completion =
            Completion::from_events(events, request.stop, request.max_tokens, natural_end);
        Ok(completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_ids_are_stable() {
        assert_eq!(text_token_id("return"), text_token_id("return"));
        assert_ne!(text_token_id("return"), text_token_id("if"));
        assert_eq!(text_token_id(""), 0x811c_9dc5);
    }

    #[test]
    fn request_serialisation() {
        let stop = vec!["\ndef ".to_string()];
        let body = CompletionRequest {
            model: "m",
            prompt: "p",
            max_tokens: 3,
            temperature: 0.4,
            stop: &stop,
            logprobs: 5,
            seed: 9,
        };
        let v: serde_json::Value = serde_json::to_value(&body).unwrap();
        assert_eq!(v["logprobs"], 5);
        assert_eq!(v["stop"][0], "\ndef ");
        assert_eq!(v["seed"], 9);
        let empty = CompletionRequest { stop: &[], ..body };
        assert!(serde_json::to_value(&empty).unwrap().get("stop").is_none());
    }
}
