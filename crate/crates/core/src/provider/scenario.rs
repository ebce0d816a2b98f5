//! Scripted, deterministic backend.
//!
//! A scenario file is a JSON document:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "name": "demo",
//!   "vocab_size": 64,
//!   "paths": [
//!     { "after": "def f(x):\n", "steps": [
//!         "    ",
//!         { "text": "return", "p": 0.7, "alts": [{ "text": "if", "p": 0.2 }] },
//!         " x\n",
//!         { "eos": true }
//!     ] }
//!   ],
//!   "samples": [
//!     { "after": "def f(x):\n    ", "branches": [
//!         ["# echo the input\n", { "text": "    return", "p": 0.9, "alts": [{ "text": "    if", "p": 0.05 }] }, " x\n"]
//!     ] }
//!   ]
//! }
//! ```
//!
//! A *path* scripts a greedy walk: each step is the argmax token at the
//! context `after + <text of the previous steps>`, and the step's `p`/`alts`
//! give the distribution there. A *sample* node scripts the seeded branches
//! returned by `sample_completion` for contexts ending in `after`.
//!
//! Steps are either a plain string, which is split into one-hot tokens
//! (newlines, line-start indentation, words and punctuation runs each
//! become one token), or an object describing a single token. `{"eos": true}`
//! is the end-of-sequence token.
//!
//! Lookup picks the entry whose key is the longest suffix of the queried
//! context; keys live in a trie over reversed characters. A context that
//! matches no key is a scenario miss, never an improvised answer.
//!
//! Branch choice: `seed % branches.len()` when no branch has a `weight`,
//! otherwise a weighted draw from a ChaCha stream seeded with `seed`.
//! Token ids are interned in order of first appearance starting at 1; id 0
//! is reserved for end-of-sequence.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{
    require_context, require_sampling, Completion, FinishReason, Provider, ProviderIdentity,
    ProviderKind, SampleRequest, TokenEvent,
};
use crate::error::{Error, Result};
use crate::segmentation::LineCursor;
use crate::uncertainty::{TokenDistribution, TokenLogprob};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

const EOS_ID: u32 = 0;
const EOS_TEXT: &str = "<eos>";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    format_version: u32,
    #[serde(default)]
    name: String,
    vocab_size: usize,
    #[serde(default)]
    paths: Vec<PathSpec>,
    #[serde(default)]
    samples: Vec<SampleSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathSpec {
    after: String,
    steps: Vec<StepSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleSpec {
    after: String,
    branches: Vec<BranchSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum BranchSpec {
    Steps(Vec<StepSpec>),
    Weighted { weight: f64, steps: Vec<StepSpec> },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StepSpec {
    Run(String),
    Token(TokenSpec),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenSpec {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    eos: bool,
    #[serde(default)]
    id: Option<u32>,
    #[serde(default)]
    p: Option<f64>,
    #[serde(default)]
    logprob: Option<f64>,
    #[serde(default)]
    alts: Vec<TokenSpec>,
}

/// Trie over reversed keys answering longest-suffix queries.
#[derive(Debug)]
struct SuffixTrie<T> {
    nodes: Vec<TrieNode>,
    values: Vec<T>,
}

#[derive(Debug, Default)]
struct TrieNode {
    children: BTreeMap<char, usize>,
    value: Option<usize>,
}

impl<T> SuffixTrie<T> {
    fn new() -> Self {
        Self {
            nodes: vec![TrieNode::default()],
            values: Vec::new(),
        }
    }

    /// Returns the existing value when the key is already present.
    fn insert(&mut self, key: &str, value: T) -> std::result::Result<(), &T> {
        let mut at = 0;
        for c in key.chars().rev() {
            at = match self.nodes[at].children.get(&c) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[at].children.insert(c, next);
                    next
                }
            };
        }
        if let Some(existing) = self.nodes[at].value {
            return Err(&self.values[existing]);
        }
        self.values.push(value);
        self.nodes[at].value = Some(self.values.len() - 1);
        Ok(())
    }

    fn longest_suffix(&self, context: &str) -> Option<&T> {
        let mut at = 0;
        let mut best = self.nodes[0].value;
        for c in context.chars().rev() {
            match self.nodes[at].children.get(&c) {
                Some(&next) => {
                    at = next;
                    if let Some(v) = self.nodes[at].value {
                        best = Some(v);
                    }
                }
                None => break,
            }
        }
        best.map(|v| &self.values[v])
    }

    fn len(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug)]
struct Branch {
    weight: Option<f64>,
    events: Vec<TokenEvent>,
}

/// Deterministic backend replaying a scenario file.
#[derive(Debug)]
pub struct ScenarioProvider {
    name: String,
    vocab_size: usize,
    top_k: Option<usize>,
    distributions: SuffixTrie<TokenDistribution>,
    samples: SuffixTrie<Vec<Branch>>,
}

struct Loader {
    vocab_size: usize,
    ids: HashMap<String, u32>,
    next_id: u32,
}

impl Loader {
    fn intern(&mut self, text: &str) -> u32 {
        if let Some(&id) = self.ids.get(text) {
            return id;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.ids.insert(text.to_string(), id);
        id
    }

    fn entry(&mut self, spec: &TokenSpec, default_p: Option<f64>) -> Result<TokenLogprob> {
        let logprob = match (spec.p, spec.logprob, default_p) {
            (Some(_), Some(_), _) => {
                return Err(Error::InvalidConfiguration(
                    "token gives both p and logprob".into(),
                ))
            }
            (Some(p), None, _) => p.ln(),
            (None, Some(lp), _) => lp,
            (None, None, Some(p)) => p.ln(),
            (None, None, None) => {
                return Err(Error::InvalidConfiguration(format!(
                    "alternative {:?} needs p or logprob",
                    spec.text
                )))
            }
        };
        if spec.eos {
            return Ok(TokenLogprob::new(EOS_ID, EOS_TEXT, logprob));
        }
        let text = spec.text.clone().ok_or_else(|| {
            Error::InvalidConfiguration("token step needs text or eos".into())
        })?;
        let id = match spec.id {
            Some(id) => id,
            None => self.intern(&text),
        };
        Ok(TokenLogprob::new(id, text, logprob))
    }

    /// Expands a step into `(chosen, distribution)` pairs.
    fn expand(
        &mut self,
        step: &StepSpec,
        cursor: &LineCursor,
    ) -> Result<Vec<(TokenLogprob, TokenDistribution)>> {
        match step {
            StepSpec::Run(run) => split_run(run, cursor.at_line_start)
                .into_iter()
                .map(|text| {
                    let entry = TokenLogprob::new(self.intern(&text), text, 0.0);
                    let dist = TokenDistribution::new(vec![entry.clone()], self.vocab_size)?;
                    Ok((entry, dist))
                })
                .collect(),
            StepSpec::Token(spec) => {
                let chosen = self.entry(spec, Some(1.0))?;
                let mut entries = vec![chosen.clone()];
                for alt in &spec.alts {
                    if !alt.alts.is_empty() {
                        return Err(Error::InvalidConfiguration(
                            "alternatives cannot nest".into(),
                        ));
                    }
                    entries.push(self.entry(alt, None)?);
                }
                let dist = TokenDistribution::new(entries, self.vocab_size)?;
                Ok(vec![(chosen, dist)])
            }
        }
    }
}

/// Splits a one-hot run into tokens: newline, line-start indentation,
/// `[ \t]*word`, `[ \t]*punctuation-run`, trailing blanks.
fn split_run(run: &str, mut line_start: bool) -> Vec<String> {
    let chars: Vec<char> = run.chars().collect();
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let is_blank = |c: char| c == ' ' || c == '\t';
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = i;
        if chars[i] == '\n' {
            tokens.push("\n".to_string());
            i += 1;
            line_start = true;
            continue;
        }
        while i < chars.len() && is_blank(chars[i]) {
            i += 1;
        }
        let blanks_end = i;
        if line_start && blanks_end > start {
            tokens.push(chars[start..blanks_end].iter().collect());
            line_start = false;
            continue;
        }
        line_start = false;
        if i < chars.len() && chars[i] != '\n' {
            let word = is_word(chars[i]);
            while i < chars.len()
                && chars[i] != '\n'
                && !is_blank(chars[i])
                && is_word(chars[i]) == word
            {
                i += 1;
            }
        }
        tokens.push(chars[start..i].iter().collect());
    }
    tokens
}

impl ScenarioProvider {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(json)?;
        if file.format_version != SCENARIO_FORMAT_VERSION {
            return Err(Error::InvalidConfiguration(format!(
                "unsupported scenario format_version {} (expected {SCENARIO_FORMAT_VERSION})",
                file.format_version
            )));
        }
        if file.vocab_size < 2 {
            return Err(Error::InvalidConfiguration("vocab_size must be >= 2".into()));
        }
        let mut loader = Loader {
            vocab_size: file.vocab_size,
            ids: HashMap::new(),
            next_id: EOS_ID + 1,
        };

        let mut distributions = SuffixTrie::new();
        for path in &file.paths {
            let mut key = path.after.clone();
            let mut cursor = LineCursor::after(&key);
            let mut ended = false;
            for step in &path.steps {
                if ended {
                    return Err(Error::InvalidConfiguration(format!(
                        "path after {:?} continues past end-of-sequence",
                        tail(&path.after)
                    )));
                }
                for (chosen, dist) in loader.expand(step, &cursor)? {
                    if dist.top() != &chosen {
                        return Err(Error::InvalidConfiguration(format!(
                            "path step {:?} after {:?} is not the argmax of its distribution",
                            chosen.token_text,
                            tail(&key)
                        )));
                    }
                    if let Err(existing) = distributions.insert(&key, dist.clone()) {
                        if existing != &dist {
                            return Err(Error::InvalidConfiguration(format!(
                                "conflicting distributions for context ending in {:?}",
                                tail(&key)
                            )));
                        }
                    }
                    if chosen.token_id == EOS_ID {
                        ended = true;
                        break;
                    }
                    key.push_str(&chosen.token_text);
                    cursor = cursor.advance(&chosen.token_text);
                }
            }
        }

        let mut samples = SuffixTrie::new();
        for spec in &file.samples {
            if spec.branches.is_empty() {
                return Err(Error::InvalidConfiguration(format!(
                    "sample node after {:?} has no branches",
                    tail(&spec.after)
                )));
            }
            let mut branches = Vec::with_capacity(spec.branches.len());
            for branch in &spec.branches {
                let (weight, steps) = match branch {
                    BranchSpec::Steps(steps) => (None, steps),
                    BranchSpec::Weighted { weight, steps } => (Some(*weight), steps),
                };
                let mut cursor = LineCursor::after(&spec.after);
                let mut events = Vec::new();
                for step in steps {
                    for (chosen, dist) in loader.expand(step, &cursor)? {
                        let mut event = TokenEvent::from_distribution(&chosen, &dist);
                        if chosen.token_id == EOS_ID {
                            event.end_of_sequence = true;
                            event.token_text.clear();
                        }
                        cursor = cursor.advance(&event.token_text);
                        events.push(event);
                    }
                }
                branches.push(Branch { weight, events });
            }
            let weighted = branches.iter().filter(|b| b.weight.is_some()).count();
            if weighted != 0 && weighted != branches.len() {
                return Err(Error::InvalidConfiguration(format!(
                    "sample node after {:?} mixes weighted and unweighted branches",
                    tail(&spec.after)
                )));
            }
            if samples.insert(&spec.after, branches).is_err() {
                return Err(Error::InvalidConfiguration(format!(
                    "duplicate sample node after {:?}",
                    tail(&spec.after)
                )));
            }
        }

        Ok(Self {
            name: file.name,
            vocab_size: file.vocab_size,
            top_k: None,
            distributions,
            samples,
        })
    }

    /// Truncates every returned distribution to its `k` most likely entries.
    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = Some(k.max(1));
        self
    }

    pub fn distribution_count(&self) -> usize {
        self.distributions.len()
    }

    fn pick_branch<'a>(&self, branches: &'a [Branch], seed: u64) -> &'a Branch {
        if branches[0].weight.is_none() {
            return &branches[(seed % branches.len() as u64) as usize];
        }
        let total: f64 = branches.iter().map(|b| b.weight.unwrap_or(0.0)).sum();
        let mut draw = ChaCha8Rng::seed_from_u64(seed).gen::<f64>() * total;
        for b in branches {
            draw -= b.weight.unwrap_or(0.0);
            if draw < 0.0 {
                return b;
            }
        }
        branches.last().expect("non-empty")
    }
}

fn tail(s: &str) -> String {
    let start = s.char_indices().rev().nth(39).map_or(0, |(i, _)| i);
    s[start..].to_string()
}

impl Provider for ScenarioProvider {
    fn identity(&self) -> ProviderIdentity {
        ProviderIdentity {
            kind: ProviderKind::Scenario,
            name: self.name.clone(),
            model: None,
            vocab_size: self.vocab_size,
        }
    }

    fn next_distribution(&self, context: &str) -> Result<TokenDistribution> {
        require_context(context)?;
        let dist = self
            .distributions
            .longest_suffix(context)
            .ok_or_else(|| Error::ScenarioMiss { tail: tail(context) })?;
        match self.top_k {
            Some(k) if dist.entries().len() > k => {
                TokenDistribution::new(dist.entries()[..k].to_vec(), self.vocab_size)
            }
            _ => Ok(dist.clone()),
        }
    }

    fn is_end_of_sequence(&self, entry: &TokenLogprob) -> bool {
        entry.token_id == EOS_ID
    }

    fn sample_completion(&self, request: &SampleRequest<'_>) -> Result<Completion> {
        require_sampling(request)?;
        let branches = self
            .samples
            .longest_suffix(request.context)
            .ok_or_else(|| Error::ScenarioMiss {
                tail: tail(request.context),
            })?;
        let branch = self.pick_branch(branches, request.seed);
        Ok(Completion::from_events(
            branch.events.iter().cloned(),
            request.stop,
            request.max_tokens,
            FinishReason::EndOfSequence,
        ))
    }
}
