//! Uncertainty-gated chain-of-thought decoding for code generation.
//!
//! The [`engine`] decodes line by line. At the first token of each line it
//! scores the next-token distribution ([`uncertainty`]); lines whose score
//! exceeds a threshold get a sampled reasoning step ([`cot`]), the rest are
//! decoded greedily. [`bench`] runs the controller over a problem set and
//! reports the fraction of problems whose tests pass.

pub mod bench;
pub mod cot;
pub mod engine;
pub mod error;
pub mod provider;
pub mod segmentation;
pub mod trace;
pub mod uncertainty;

pub use cot::{
    build_cot_prompt, confidence, default_few_shot, load_few_shot, run_cot_step, select_candidate,
    CotCandidate, CotConfig, FewShotExample,
};
pub use engine::{
    generate, EngineConfig, GenerationFailure, GenerationFinish, GenerationResult, LineRecord,
    Mode,
};
pub use error::{Error, Result};
pub use provider::{
    Completion, FinishReason, HttpProvider, Provider, ProviderConfig, ProviderIdentity,
    ProviderKind, SampleRequest, ScenarioProvider, TokenEvent,
};
pub use segmentation::split_reasoning_and_code;
pub use trace::{read_trace, replay_gating, write_trace, DecodeTrace, TraceHeader};
pub use uncertainty::{
    entropy_uncertainty, gate, measure, pd_uncertainty, Measure, TokenDistribution,
    TokenLogprob, TruncationMode, UncertaintyScore,
};
