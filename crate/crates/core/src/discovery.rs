//! One generation of the discovery loop: select an action, obtain a spec
//! from a backend with bounded corrections, reconstruct, evaluate, record.
//!
//! Backends and evaluators are traits so the loop runs identically against
//! the scripted backend, an HTTP model service, ground-truth metrics or a
//! human queue. Checkpointing and signal handling belong to the caller,
//! which only ever sees the state between generations.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::evolution::{
    ranked, select_action, ActionChoice, AlgorithmRecord, CompressionPolicy, DiscoveryState, Outcome,
    PolicyConfig,
};
use crate::field::ComplexField;
use crate::metrics::{evaluate_ground_truth, Aggregation, EvalResult, Tier, TierPolicy};
use crate::pipeline::{validate, PipelineRunner, PipelineSpec};
use crate::recon::{reconstruct, ReconConfig, Regularizer};
use crate::sim::{Archetype, Dataset};

/// Records shown to the backend.
pub const SUMMARY_LEN: usize = 10;
/// Human suggestions carried forward.
pub const MAX_SUGGESTIONS: usize = 8;

// Stream labels for derive_seed.
const STREAM_ACTION: u64 = 1;
const STREAM_BACKEND: u64 = 2;
const STREAM_REGULARIZER: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub id: String,
    pub generation: u64,
    pub technique_tags: Vec<String>,
    pub spec: Option<PipelineSpec>,
    pub score: Option<f64>,
    pub tier: Option<Tier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentInfo {
    pub id: String,
    pub spec: PipelineSpec,
    pub score: f64,
}

/// Everything a backend may condition on. Parents are ordered best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub archetype: Archetype,
    pub experimental_context: String,
    pub summary: Vec<SummaryEntry>,
    pub action: ActionChoice,
    pub parents: Vec<ParentInfo>,
    pub suggestions: Vec<String>,
    pub seed: u64,
}

/// Feedback for a rejected attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub attempt: u32,
    pub response: String,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProposalError {
    /// Transport failure after the backend's own retries; the session pauses.
    Unavailable(String),
    /// A reply arrived but held no usable spec; counts as an attempt.
    Invalid { response: String, message: String },
}

pub trait SpecBackend {
    fn propose(&mut self, ctx: &GenerationContext, corrections: &[Correction])
        -> core::result::Result<PipelineSpec, ProposalError>;
}

/// A reconstructed candidate awaiting a score.
#[derive(Debug, Clone)]
pub struct Candidate<'a> {
    pub record_id: &'a str,
    pub generation: u64,
    pub spec: &'a PipelineSpec,
    pub object: &'a ComplexField,
}

pub trait CandidateEvaluator {
    fn evaluate(&mut self, candidate: &Candidate<'_>) -> Result<EvalResult>;
}

/// Scores against the dataset's reference object.
#[derive(Debug, Clone)]
pub struct GroundTruthEvaluator {
    pub reference: ComplexField,
    pub strategy: Aggregation,
    pub tiers: TierPolicy,
}

impl CandidateEvaluator for GroundTruthEvaluator {
    fn evaluate(&mut self, c: &Candidate<'_>) -> Result<EvalResult> {
        evaluate_ground_truth(c.object, Some(&self.reference), self.strategy, &self.tiers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub archetype: Archetype,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub compression: CompressionPolicy,
    #[serde(default)]
    pub tiers: TierPolicy,
    pub recon: ReconConfig,
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.compression.validate()?;
        self.tiers.validate()?;
        self.recon.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepError {
    /// Backend unreachable; no generation was consumed.
    Paused(String),
    /// The evaluator gave up waiting; no generation was consumed.
    Interrupted,
    Fatal(Error),
}

impl core::fmt::Display for StepError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            StepError::Paused(m) => write!(f, "session paused: {m}"),
            StepError::Interrupted => write!(f, "interrupted"),
            StepError::Fatal(e) => write!(f, "{e}"),
        }
    }
}

/// Builds the backend context for `choice` at `generation`.
pub fn build_context(
    state: &DiscoveryState,
    cfg: &DiscoveryConfig,
    choice: &ActionChoice,
    generation: u64,
) -> Result<GenerationContext> {
    let summary = ranked(&state.history)
        .into_iter()
        .take(SUMMARY_LEN)
        .map(|r| SummaryEntry {
            id: r.id.clone(),
            generation: r.generation,
            technique_tags: r.technique_tags.clone(),
            spec: r.spec.clone(),
            score: r.score(),
            tier: r.tier(),
        })
        .collect();
    let mut parents = Vec::new();
    for id in choice.parents() {
        let r = state
            .history
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::UnknownRecord(id.clone()))?;
        let (Some(spec), Some(score)) = (r.spec.clone(), r.score()) else {
            return Err(Error::InvalidArgument(format!("parent {id} has no evaluated spec")));
        };
        parents.push(ParentInfo { id, spec, score });
    }
    Ok(GenerationContext {
        archetype: cfg.archetype,
        experimental_context: cfg.archetype.description().to_string(),
        summary,
        action: choice.clone(),
        parents,
        suggestions: state.suggestions.clone(),
        seed: derive_seed(state.master_seed, &[generation, STREAM_BACKEND]),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Obtained {
    Accepted(PipelineSpec),
    /// `last` is the final parseable (but invalid) spec, if any.
    Exhausted { error: String, last: Option<PipelineSpec> },
}

/// Requests a spec, re-prompting with violations up to `max_corrections`
/// times. Returns the outcome and the number of attempts spent, or the
/// transport error when the backend is unavailable.
pub fn obtain_spec(
    backend: &mut dyn SpecBackend,
    ctx: &GenerationContext,
    max_corrections: u32,
) -> core::result::Result<(Obtained, u32), String> {
    let mut corrections: Vec<Correction> = Vec::new();
    let mut last_spec = None;
    let mut last_error = String::new();
    for attempt in 1..=max_corrections + 1 {
        match backend.propose(ctx, &corrections) {
            Err(ProposalError::Unavailable(m)) => return Err(m),
            Err(ProposalError::Invalid { response, message }) => {
                last_error = message.clone();
                corrections.push(Correction {
                    attempt,
                    response,
                    violations: alloc::vec![message],
                });
            }
            Ok(spec) => {
                let violations = validate(&spec);
                if violations.is_empty() {
                    return Ok((Obtained::Accepted(spec), attempt));
                }
                let messages: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                last_error = messages.join("; ");
                corrections.push(Correction {
                    attempt,
                    response: spec.to_json(),
                    violations: messages,
                });
                last_spec = Some(spec);
            }
        }
    }
    let error = format!("no valid spec after {} attempts: {last_error}", max_corrections + 1);
    Ok((Obtained::Exhausted { error, last: last_spec }, max_corrections + 1))
}

/// Runs generation `state.next_generation` and appends its record.
pub fn run_generation<'s>(
    state: &'s mut DiscoveryState,
    cfg: &DiscoveryConfig,
    dataset: &Dataset,
    backend: &mut dyn SpecBackend,
    evaluator: &mut dyn CandidateEvaluator,
    created_at: u64,
) -> core::result::Result<&'s AlgorithmRecord, StepError> {
    let generation = state.next_generation;
    let draw = derive_seed(state.master_seed, &[generation, STREAM_ACTION]);
    let choice = select_action(&state.history, &cfg.policy, &state.policy_state, generation, draw);
    let ctx = build_context(state, cfg, &choice, generation).map_err(StepError::Fatal)?;
    let (proposal, attempts) =
        obtain_spec(backend, &ctx, cfg.policy.max_correction_attempts).map_err(StepError::Paused)?;

    let (spec, outcome) = match proposal {
        Obtained::Exhausted { error, last } => (last, Outcome::Failed { error }),
        Obtained::Accepted(spec) => {
            let id = AlgorithmRecord::make_id(generation, Some(&spec));
            let outcome = evaluate_spec(&spec, &id, generation, cfg, dataset, evaluator, state.master_seed);
            let outcome = outcome.map_err(|_| StepError::Interrupted)?;
            (Some(spec), outcome)
        }
    };
    let record = AlgorithmRecord {
        id: AlgorithmRecord::make_id(generation, spec.as_ref()),
        technique_tags: spec.as_ref().map(|s| s.technique_tags()).unwrap_or_default(),
        spec,
        generation,
        action: choice.action(),
        parents: choice.parents(),
        outcome,
        attempts,
        created_at,
    };
    if let Some(s) = record.eval().and_then(|e| e.suggestions.clone()) {
        if !s.trim().is_empty() {
            state.suggestions.push(s);
            let excess = state.suggestions.len().saturating_sub(MAX_SUGGESTIONS);
            state.suggestions.drain(..excess);
        }
    }
    state.policy_state.record(&choice, generation);
    state.insert(record, &cfg.compression).map_err(StepError::Fatal)?;
    state.next_generation = generation + 1;
    Ok(state.archive.last().expect("just inserted"))
}

fn evaluate_spec(
    spec: &PipelineSpec,
    id: &str,
    generation: u64,
    cfg: &DiscoveryConfig,
    dataset: &Dataset,
    evaluator: &mut dyn CandidateEvaluator,
    master_seed: u64,
) -> Result<Outcome> {
    let result = (|| {
        let mut runner = PipelineRunner::new(
            spec.clone(),
            derive_seed(master_seed, &[generation, STREAM_REGULARIZER]),
        )?;
        let recon = reconstruct(dataset, &cfg.recon, Some(&mut runner as &mut dyn Regularizer))?;
        evaluator.evaluate(&Candidate {
            record_id: id,
            generation,
            spec,
            object: &recon.object,
        })
    })();
    Ok(match result {
        Ok(eval) => Outcome::Evaluated { eval },
        Err(Error::Interrupted) => return Err(Error::Interrupted),
        Err(e) => Outcome::Failed { error: e.to_string() },
    })
}
