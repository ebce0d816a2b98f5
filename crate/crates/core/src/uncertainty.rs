//! Uncertainty measures over a next-token distribution and the gating predicate.
//!
//! Two measures are provided, both normalised to `[0, 1]`:
//!
//! | Measure | Value |
//! |---------|-------|
//! | [`entropy_uncertainty`] | `H(p) / ln V` |
//! | [`pd_uncertainty`] | `1 - (p(top1) - p(top2))` |
//!
//! Logs are natural throughout. The entropy ratio is base-invariant, so the
//! choice has no observable effect.
//!
//! Backends usually expose only the top-K log-probabilities. For such
//! truncated distributions [`TruncationMode`] decides what happens to the
//! unseen mass.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when checking that probabilities sum to at most one.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// One candidate token at a generation position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token_id: u32,
    pub token_text: String,
    /// Natural-log probability.
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn new(token_id: u32, token_text: impl Into<String>, logprob: f64) -> Self {
        Self {
            token_id,
            token_text: token_text.into(),
            logprob,
        }
    }

    pub fn prob(&self) -> f64 {
        self.logprob.exp()
    }
}

/// Orders by logprob descending, then by token id ascending.
pub(crate) fn rank_order(a: &TokenLogprob, b: &TokenLogprob) -> Ordering {
    b.logprob
        .partial_cmp(&a.logprob)
        .unwrap_or(Ordering::Equal)
        .then(a.token_id.cmp(&b.token_id))
}

/// A possibly truncated next-token distribution.
///
/// Entries are kept sorted by logprob (descending, ties by lowest id). The
/// constructor validates every invariant, so a value of this type is always
/// well formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct TokenDistribution {
    entries: Vec<TokenLogprob>,
    vocab_size: usize,
    truncated: bool,
}

#[derive(Deserialize)]
struct RawDistribution {
    entries: Vec<TokenLogprob>,
    vocab_size: usize,
}

impl TryFrom<RawDistribution> for TokenDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        TokenDistribution::new(raw.entries, raw.vocab_size)
    }
}

impl TokenDistribution {
    pub fn new(mut entries: Vec<TokenLogprob>, vocab_size: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidDistribution("no entries".into()));
        }
        if vocab_size < entries.len() {
            return Err(Error::InvalidDistribution(format!(
                "vocab_size {vocab_size} smaller than {} entries",
                entries.len()
            )));
        }
        if let Some(bad) = entries
            .iter()
            .find(|e| e.logprob.is_nan() || e.logprob > MASS_TOLERANCE)
        {
            return Err(Error::InvalidDistribution(format!(
                "token {:?} has logprob {}",
                bad.token_text, bad.logprob
            )));
        }
        entries.sort_by(rank_order);
        let mass: f64 = entries.iter().map(TokenLogprob::prob).sum();
        if mass > 1.0 + MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probability mass {mass} exceeds 1"
            )));
        }
        if mass <= 0.0 {
            return Err(Error::InvalidDistribution("zero probability mass".into()));
        }
        let truncated = entries.len() < vocab_size;
        Ok(Self {
            entries,
            vocab_size,
            truncated,
        })
    }

    /// Builds a distribution from plain probabilities, ids assigned by position.
    pub fn from_probs(probs: &[f64], vocab_size: usize) -> Result<Self> {
        let entries = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| TokenLogprob::new(i as u32, format!("t{i}"), p.ln()))
            .collect();
        Self::new(entries, vocab_size)
    }

    pub fn entries(&self) -> &[TokenLogprob] {
        &self.entries
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Argmax entry, ties broken by lowest token id.
    pub fn top(&self) -> &TokenLogprob {
        &self.entries[0]
    }

    pub fn mass(&self) -> f64 {
        self.entries.iter().map(TokenLogprob::prob).sum()
    }
}

/// How the unseen probability mass of a truncated distribution is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Spread `1 - Σp` uniformly over the `V - K` unseen tokens.
    #[default]
    ResidualUniform,
    /// Rescale the visible entries to sum to one.
    Renormalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    #[default]
    Entropy,
    #[serde(alias = "pd")]
    ProbabilityDifferential,
}

impl Measure {
    /// Default gating threshold for this measure.
    pub fn default_tau(self) -> f64 {
        match self {
            Measure::Entropy => 0.25,
            Measure::ProbabilityDifferential => 0.45,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Entropy => f.write_str("entropy"),
            Measure::ProbabilityDifferential => f.write_str("pd"),
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(Measure::Entropy),
            "pd" | "probability_differential" => Ok(Measure::ProbabilityDifferential),
            other => Err(Error::InvalidConfiguration(format!(
                "unknown measure {other:?} (expected entropy or pd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub value: f64,
    pub measure: Measure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_entropy_nats: Option<f64>,
}

/// Shannon entropy in nats, `0 ln 0 := 0`.
pub fn shannon_entropy(dist: &TokenDistribution, mode: TruncationMode) -> Result<f64> {
    let mass = dist.mass();
    let residual = 1.0 - mass;
    if residual < -MASS_TOLERANCE {
        return Err(Error::InvalidDistribution(format!(
            "negative residual mass {residual}"
        )));
    }

    let visible = |shift: f64| -> f64 {
        dist.entries
            .iter()
            .filter(|e| e.logprob > f64::NEG_INFINITY)
            .map(|e| {
                let logp = e.logprob - shift;
                -logp.exp() * logp
            })
            .sum()
    };

    if !dist.truncated {
        let first = dist.entries[0].logprob;
        if dist.entries.iter().all(|e| e.logprob == first) {
            return Ok((dist.vocab_size as f64).ln());
        }
        return Ok(visible(0.0).max(0.0));
    }
    let h = match mode {
        TruncationMode::ResidualUniform => {
            let unseen = (dist.vocab_size - dist.entries.len()) as f64;
            let tail = if residual > 0.0 {
                -residual * (residual / unseen).ln()
            } else {
                0.0
            };
            visible(0.0) + tail
        }
        TruncationMode::Renormalize => visible(mass.ln()),
    };
    Ok(h.max(0.0))
}

/// Normalised entropy `H(p) / ln V`.
pub fn entropy_uncertainty(
    dist: &TokenDistribution,
    mode: TruncationMode,
) -> Result<UncertaintyScore> {
    if dist.vocab_size < 2 {
        return Err(Error::InvalidConfiguration(format!(
            "vocab_size {} leaves ln V = 0",
            dist.vocab_size
        )));
    }
    let h = shannon_entropy(dist, mode)?;
    let value = (h / (dist.vocab_size as f64).ln()).clamp(0.0, 1.0);
    Ok(UncertaintyScore {
        value,
        measure: Measure::Entropy,
        raw_entropy_nats: Some(h),
    })
}

/// `1 - (p(top1) - p(top2))`, with `p(top2) = 0` for a single-entry distribution.
pub fn pd_uncertainty(dist: &TokenDistribution) -> UncertaintyScore {
    let (first, second) = top_two_probs(&dist.entries);
    UncertaintyScore {
        value: (1.0 - (first - second)).clamp(0.0, 1.0),
        measure: Measure::ProbabilityDifferential,
        raw_entropy_nats: None,
    }
}

/// Top-1 and top-2 probabilities of a rank-ordered entry list.
pub(crate) fn top_two_probs(entries: &[TokenLogprob]) -> (f64, f64) {
    let first = entries.first().map_or(0.0, TokenLogprob::prob);
    let second = entries.get(1).map_or(0.0, TokenLogprob::prob);
    (first, second)
}

pub fn measure(
    dist: &TokenDistribution,
    measure: Measure,
    mode: TruncationMode,
) -> Result<UncertaintyScore> {
    match measure {
        Measure::Entropy => entropy_uncertainty(dist, mode),
        Measure::ProbabilityDifferential => Ok(pd_uncertainty(dist)),
    }
}

/// True iff the score strictly exceeds `tau`.
pub fn gate(score: &UncertaintyScore, tau: f64) -> bool {
    score.value > tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full(probs: &[f64]) -> TokenDistribution {
        TokenDistribution::from_probs(probs, probs.len()).unwrap()
    }

    fn score(value: f64) -> UncertaintyScore {
        UncertaintyScore {
            value,
            measure: Measure::Entropy,
            raw_entropy_nats: None,
        }
    }

    #[test]
    fn entropy_examples() {
        let one_hot = full(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(shannon_entropy(&one_hot, TruncationMode::ResidualUniform).unwrap(), 0.0);

        let uniform = full(&[0.25; 4]);
        let h = shannon_entropy(&uniform, TruncationMode::ResidualUniform).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-12);

        let skewed = full(&[0.7, 0.2, 0.1]);
        let h = shannon_entropy(&skewed, TruncationMode::ResidualUniform).unwrap();
        assert!((h - 0.801_818_552_543_337_3).abs() < 1e-12);
    }

    #[test]
    fn entropy_uncertainty_examples() {
        let u = entropy_uncertainty(&full(&[0.25; 4]), TruncationMode::default()).unwrap();
        assert!((u.value - 1.0).abs() < 1e-12);
        let u = entropy_uncertainty(&full(&[1.0, 0.0, 0.0]), TruncationMode::default()).unwrap();
        assert_eq!(u.value, 0.0);
        let u = entropy_uncertainty(&full(&[0.7, 0.2, 0.1]), TruncationMode::default()).unwrap();
        assert!((u.value - 0.729_846_699_162_097_5).abs() < 1e-12);
        let raw = u.raw_entropy_nats.unwrap();
        assert!((u.value - raw / 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_tiny_vocab() {
        let d = TokenDistribution::from_probs(&[1.0], 1).unwrap();
        assert!(matches!(
            entropy_uncertainty(&d, TruncationMode::default()),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn pd_examples() {
        assert_eq!(pd_uncertainty(&full(&[1.0, 0.0])).value, 0.0);
        assert!((pd_uncertainty(&full(&[0.25; 4])).value - 1.0).abs() < 1e-12);
        assert!((pd_uncertainty(&full(&[0.7, 0.2, 0.1])).value - 0.5).abs() < 1e-12);
        let single = TokenDistribution::from_probs(&[0.6], 10).unwrap();
        assert!((pd_uncertainty(&single).value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gate_examples() {
        assert!(gate(&score(0.30), 0.25));
        assert!(!gate(&score(0.25), 0.25));
        assert!(!gate(&score(1.0), 1.0));
    }

    #[test]
    fn truncated_modes() {
        // top-2 of a 4-token vocab, 0.2 unseen mass over 2 tokens
        let d = TokenDistribution::from_probs(&[0.5, 0.3], 4).unwrap();
        assert!(d.truncated());
        let residual = shannon_entropy(&d, TruncationMode::ResidualUniform).unwrap();
        let expected = -(0.5f64 * 0.5f64.ln() + 0.3 * 0.3f64.ln() + 2.0 * 0.1 * 0.1f64.ln());
        assert!((residual - expected).abs() < 1e-12);

        let renorm = shannon_entropy(&d, TruncationMode::Renormalize).unwrap();
        let expected = -(0.625f64 * 0.625f64.ln() + 0.375 * 0.375f64.ln());
        assert!((renorm - expected).abs() < 1e-12);
    }

    #[test]
    fn malformed_distributions_are_rejected() {
        assert!(TokenDistribution::from_probs(&[0.8, 0.5], 2).is_err());
        assert!(TokenDistribution::new(vec![], 4).is_err());
        assert!(TokenDistribution::from_probs(&[0.5, 0.5], 1).is_err());
        assert!(TokenDistribution::from_probs(&[0.0, 0.0], 4).is_err());
    }

    #[test]
    fn entries_sorted_with_id_tiebreak() {
        let d = TokenDistribution::new(
            vec![
                TokenLogprob::new(7, "a", 0.5f64.ln()),
                TokenLogprob::new(3, "b", 0.5f64.ln()),
            ],
            2,
        )
        .unwrap();
        assert_eq!(d.top().token_id, 3);
    }

    #[test]
    fn serde_validates() {
        let bad = r#"{"entries":[{"token_id":0,"token_text":"x","logprob":0.5}],"vocab_size":2}"#;
        assert!(serde_json::from_str::<TokenDistribution>(bad).is_err());
        let d = full(&[0.7, 0.3]);
        let back: TokenDistribution =
            serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    fn simplex(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..=max_len).prop_filter_map("zero mass", |w| {
            let total: f64 = w.iter().sum();
            (total > 1e-9).then(|| w.iter().map(|x| x / total).collect())
        })
    }

    proptest! {
        #[test]
        fn measures_are_bounded(p in simplex(64)) {
            let d = full(&p);
            let e = entropy_uncertainty(&d, TruncationMode::ResidualUniform).unwrap().value;
            let pd = pd_uncertainty(&d).value;
            prop_assert!((0.0..=1.0).contains(&e));
            prop_assert!((0.0..=1.0).contains(&pd));
        }

        #[test]
        fn permutation_invariant(p in simplex(32), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = p.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = full(&p);
            let b = full(&shuffled);
            let ea = entropy_uncertainty(&a, TruncationMode::default()).unwrap().value;
            let eb = entropy_uncertainty(&b, TruncationMode::default()).unwrap().value;
            prop_assert!((ea - eb).abs() < 1e-12);
            prop_assert!((pd_uncertainty(&a).value - pd_uncertainty(&b).value).abs() < 1e-12);
        }

        #[test]
        fn full_distributions_ignore_truncation_mode(p in simplex(64)) {
            let d = full(&p);
            let a = shannon_entropy(&d, TruncationMode::ResidualUniform).unwrap();
            let b = shannon_entropy(&d, TruncationMode::Renormalize).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn gate_is_monotone(u in 0.0f64..=1.0, tau in 0.0f64..=1.0, bump in 0.0f64..=1.0) {
            let s = score(u);
            if !gate(&s, tau) {
                prop_assert!(!gate(&s, tau + bump));
            }
        }

        #[test]
        fn truncated_entropy_bounded(p in simplex(16), keep in 1usize..16, extra in 1usize..100) {
            let keep = keep.min(p.len());
            let mut sorted = p.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let vocab = p.len() + extra;
            let d = TokenDistribution::from_probs(&sorted[..keep], vocab).unwrap();
            for mode in [TruncationMode::ResidualUniform, TruncationMode::Renormalize] {
                let u = entropy_uncertainty(&d, mode).unwrap().value;
                prop_assert!((0.0..=1.0).contains(&u));
            }
        }
    }
}
