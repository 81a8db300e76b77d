//! Bookkeeping of the evolutionary search: algorithm records, the action
//! policy, tier-aware history compression, lineage and technique analytics,
//! and the serializable discovery state used for checkpoints.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{EvalResult, Tier};
use crate::pipeline::PipelineSpec;

/// How a record's spec came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "generated")]
    Generated,
    #[serde(rename = "tuned")]
    Tuned,
    #[serde(rename = "evolved-crossover")]
    Crossover,
    #[serde(rename = "evolved-mutation")]
    Mutation,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Generated, Action::Tuned, Action::Crossover, Action::Mutation];

    pub fn parent_count(&self) -> usize {
        match self {
            Action::Generated => 0,
            Action::Tuned | Action::Mutation => 1,
            Action::Crossover => 2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Generated => "generated",
            Action::Tuned => "tuned",
            Action::Crossover => "evolved-crossover",
            Action::Mutation => "evolved-mutation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Evaluated { eval: EvalResult },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRecord {
    /// `g<generation>-<spec id>`; unique because generations are.
    pub id: String,
    /// Absent when no attempt produced a parseable spec.
    pub spec: Option<PipelineSpec>,
    pub generation: u64,
    pub action: Action,
    pub parents: Vec<String>,
    pub outcome: Outcome,
    /// Backend requests spent on this record, corrections included.
    pub attempts: u32,
    pub technique_tags: Vec<String>,
    /// Milliseconds since the Unix epoch, supplied by the caller.
    pub created_at: u64,
}

impl AlgorithmRecord {
    pub fn make_id(generation: u64, spec: Option<&PipelineSpec>) -> String {
        match spec {
            Some(s) => format!("g{generation:04}-{}", s.id()),
            None => format!("g{generation:04}-failed"),
        }
    }

    pub fn eval(&self) -> Option<&EvalResult> {
        match &self.outcome {
            Outcome::Evaluated { eval } => Some(eval),
            Outcome::Failed { .. } => None,
        }
    }

    pub fn score(&self) -> Option<f64> {
        self.eval().map(|e| e.score)
    }

    pub fn tier(&self) -> Option<Tier> {
        self.eval().map(|e| e.tier)
    }

    pub fn is_successful(&self) -> bool {
        self.tier().is_some_and(|t| t.is_successful())
    }

    /// Equality ignoring the wall-clock field.
    pub fn same_content(&self, other: &Self) -> bool {
        Self { created_at: 0, ..self.clone() } == Self { created_at: 0, ..other.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub warmup_generations: u64,
    pub tune_min_gap: u64,
    pub evolve_min_gap: u64,
    pub min_successful_for_crossover: usize,
    pub max_correction_attempts: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            warmup_generations: 8,
            tune_min_gap: 5,
            evolve_min_gap: 3,
            min_successful_for_crossover: 2,
            max_correction_attempts: 2,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_generations == 0 || self.min_successful_for_crossover == 0 || self.max_correction_attempts == 0 {
            return Err(Error::InvalidArgument(
                "warmup_generations, min_successful_for_crossover and max_correction_attempts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionPolicy {
    pub trigger_size: usize,
    pub keep_top_k: usize,
    pub keep_recent: usize,
}

impl Default for CompressionPolicy {
    fn default() -> Self {
        Self {
            trigger_size: 60,
            keep_top_k: 5,
            keep_recent: 10,
        }
    }
}

impl CompressionPolicy {
    /// Mandatory survivors (top-k, recent, one best per tier) must fit under
    /// the trigger so a compressed history never exceeds it.
    pub fn validate(&self) -> Result<()> {
        if self.keep_top_k == 0 {
            return Err(Error::InvalidArgument("keep_top_k must be >= 1".into()));
        }
        let floor = self.keep_top_k + self.keep_recent + Tier::ALL.len();
        if self.trigger_size < floor {
            return Err(Error::InvalidArgument(format!(
                "trigger_size {} below keep_top_k + keep_recent + 4 = {floor}",
                self.trigger_size
            )));
        }
        Ok(())
    }
}

/// Generations at which the gated actions last ran.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyState {
    pub last_tune: Option<u64>,
    pub last_evolve: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionChoice {
    Generate,
    Tune { parent: String },
    Crossover { parents: [String; 2] },
    Mutate { parent: String },
}

impl ActionChoice {
    pub fn action(&self) -> Action {
        match self {
            ActionChoice::Generate => Action::Generated,
            ActionChoice::Tune { .. } => Action::Tuned,
            ActionChoice::Crossover { .. } => Action::Crossover,
            ActionChoice::Mutate { .. } => Action::Mutation,
        }
    }

    pub fn parents(&self) -> Vec<String> {
        match self {
            ActionChoice::Generate => Vec::new(),
            ActionChoice::Tune { parent } | ActionChoice::Mutate { parent } => alloc::vec![parent.clone()],
            ActionChoice::Crossover { parents } => parents.to_vec(),
        }
    }
}

/// Scored records, best first; ties go to the newer generation.
pub fn ranked(history: &[AlgorithmRecord]) -> Vec<&AlgorithmRecord> {
    let mut v: Vec<&AlgorithmRecord> = history.iter().filter(|r| r.score().is_some()).collect();
    v.sort_by(|a, b| {
        b.score()
            .unwrap()
            .total_cmp(&a.score().unwrap())
            .then(b.generation.cmp(&a.generation))
    });
    v
}

fn gap_ok(last: Option<u64>, generation: u64, gap: u64) -> bool {
    last.is_none_or(|l| generation.saturating_sub(l) >= gap)
}

/// Chooses the next action.
///
/// Warmup generations always generate. Afterwards tuning of the best
/// excellent record takes priority when its gap has elapsed. Otherwise, once
/// the evolve gap has elapsed, `draw` picks crossover (even) or mutation
/// (odd); a picked action whose record requirement is unmet falls back to
/// generation, as does everything else.
pub fn select_action(
    history: &[AlgorithmRecord],
    policy: &PolicyConfig,
    state: &PolicyState,
    generation: u64,
    draw: u64,
) -> ActionChoice {
    if generation < policy.warmup_generations {
        return ActionChoice::Generate;
    }
    let ranked = ranked(history);
    if gap_ok(state.last_tune, generation, policy.tune_min_gap) {
        if let Some(best) = ranked.iter().find(|r| r.tier() == Some(Tier::Excellent)) {
            return ActionChoice::Tune { parent: best.id.clone() };
        }
    }
    if !gap_ok(state.last_evolve, generation, policy.evolve_min_gap) {
        return ActionChoice::Generate;
    }
    let successful: Vec<&&AlgorithmRecord> = ranked.iter().filter(|r| r.is_successful()).collect();
    if draw.is_multiple_of(2) {
        if successful.len() >= policy.min_successful_for_crossover.max(2) {
            return ActionChoice::Crossover {
                parents: [successful[0].id.clone(), successful[1].id.clone()],
            };
        }
    } else if let Some(best) = successful.first() {
        return ActionChoice::Mutate { parent: best.id.clone() };
    }
    ActionChoice::Generate
}

impl PolicyState {
    pub fn record(&mut self, choice: &ActionChoice, generation: u64) {
        match choice {
            ActionChoice::Generate => {}
            ActionChoice::Tune { .. } => self.last_tune = Some(generation),
            ActionChoice::Crossover { .. } | ActionChoice::Mutate { .. } => self.last_evolve = Some(generation),
        }
    }
}

/// Indices (in insertion order) that survive compression.
///
/// Mandatory: top-k by score, the best record of every tier, and the last
/// `keep_recent` records. Excellent and good records are kept as well,
/// best first, for as long as the total stays within `trigger_size`.
pub fn retained_indices(history: &[AlgorithmRecord], policy: &CompressionPolicy) -> Vec<usize> {
    let index_of = |id: &str| history.iter().position(|r| r.id == id).expect("record from history");
    let ranked = ranked(history);
    let mut keep: BTreeSet<usize> = BTreeSet::new();
    for r in ranked.iter().take(policy.keep_top_k) {
        keep.insert(index_of(&r.id));
    }
    for tier in Tier::ALL {
        if let Some(r) = ranked.iter().find(|r| r.tier() == Some(tier)) {
            keep.insert(index_of(&r.id));
        }
    }
    keep.extend(history.len().saturating_sub(policy.keep_recent)..history.len());
    for r in ranked.iter().filter(|r| r.is_successful()) {
        if keep.len() >= policy.trigger_size {
            break;
        }
        keep.insert(index_of(&r.id));
    }
    keep.into_iter().collect()
}

/// Drops non-retained records once the history outgrows `trigger_size`.
pub fn compress(history: &[AlgorithmRecord], policy: &CompressionPolicy) -> Vec<AlgorithmRecord> {
    if history.len() <= policy.trigger_size {
        return history.to_vec();
    }
    retained_indices(history, policy)
        .into_iter()
        .map(|i| history[i].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageNode {
    pub id: String,
    /// False when the id is referenced but absent from the searched records.
    pub known: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub technique_tags: Vec<String>,
    pub parents: Vec<LineageNode>,
}

impl LineageNode {
    pub fn node_count(&self) -> usize {
        1 + self.parents.iter().map(|p| p.node_count()).sum::<usize>()
    }
}

/// Ancestor tree of `id`, following parent links down to generated roots.
pub fn lineage(records: &[AlgorithmRecord], id: &str) -> Result<LineageNode> {
    let by_id: BTreeMap<&str, &AlgorithmRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    if !by_id.contains_key(id) {
        return Err(Error::UnknownRecord(id.into()));
    }
    Ok(build_node(&by_id, id))
}

fn build_node(by_id: &BTreeMap<&str, &AlgorithmRecord>, id: &str) -> LineageNode {
    match by_id.get(id) {
        None => LineageNode {
            id: id.into(),
            known: false,
            generation: None,
            action: None,
            score: None,
            technique_tags: Vec::new(),
            parents: Vec::new(),
        },
        Some(r) => LineageNode {
            id: r.id.clone(),
            known: true,
            generation: Some(r.generation),
            action: Some(r.action),
            score: r.score(),
            technique_tags: r.technique_tags.clone(),
            // Parents are strictly older, so recursion terminates.
            parents: r
                .parents
                .iter()
                .filter(|p| by_id.get(p.as_str()).is_none_or(|pr| pr.generation < r.generation))
                .map(|p| build_node(by_id, p))
                .collect(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueSpan {
    pub first_gen: u64,
    pub last_gen: u64,
    pub generations: Vec<u64>,
}

/// Per technique tag, the generations of successful records using it.
pub fn technique_timeline(records: &[AlgorithmRecord]) -> BTreeMap<String, TechniqueSpan> {
    let mut out: BTreeMap<String, TechniqueSpan> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_successful()) {
        for tag in &r.technique_tags {
            let span = out.entry(tag.clone()).or_insert(TechniqueSpan {
                first_gen: r.generation,
                last_gen: r.generation,
                generations: Vec::new(),
            });
            span.first_gen = span.first_gen.min(r.generation);
            span.last_gen = span.last_gen.max(r.generation);
            if !span.generations.contains(&r.generation) {
                span.generations.push(r.generation);
            }
        }
    }
    for span in out.values_mut() {
        span.generations.sort_unstable();
    }
    out
}

/// Running maximum of scores, one entry per record in `records`; failed
/// records repeat the previous value (0 before the first success).
pub fn best_so_far(records: &[AlgorithmRecord]) -> Vec<f64> {
    let mut best = 0.0f64;
    records
        .iter()
        .map(|r| {
            if let Some(s) = r.score() {
                best = best.max(s);
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCounts {
    pub generated: usize,
    pub tuned: usize,
    pub crossover: usize,
    pub mutation: usize,
}

impl ActionCounts {
    pub fn from_records(records: &[AlgorithmRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            match r.action {
                Action::Generated => c.generated += 1,
                Action::Tuned => c.tuned += 1,
                Action::Crossover => c.crossover += 1,
                Action::Mutation => c.mutation += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub excellent: usize,
    pub good: usize,
    pub moderate: usize,
    pub poor: usize,
    pub failed: usize,
}

impl TierCounts {
    pub fn from_records(records: &[AlgorithmRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            match r.tier() {
                Some(Tier::Excellent) => c.excellent += 1,
                Some(Tier::Good) => c.good += 1,
                Some(Tier::Moderate) => c.moderate += 1,
                Some(Tier::Poor) => c.poor += 1,
                None => c.failed += 1,
            }
        }
        c
    }
}

/// Checkpoint format revision.
pub const STATE_VERSION: u32 = 1;

/// Everything needed to continue a discovery session. Per-generation
/// randomness is derived from `(master_seed, generation)`, so the generation
/// cursor is the only RNG state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryState {
    pub version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    pub next_generation: u64,
    pub policy_state: PolicyState,
    /// Compressed working history seen by the policy.
    pub history: Vec<AlgorithmRecord>,
    /// Every record ever produced, for lineage and timelines.
    pub archive: Vec<AlgorithmRecord>,
    /// Most recent human suggestions, oldest first.
    pub suggestions: Vec<String>,
}

impl DiscoveryState {
    pub fn new(config_hash: impl Into<String>, master_seed: u64) -> Self {
        Self {
            version: STATE_VERSION,
            config_hash: config_hash.into(),
            master_seed,
            next_generation: 0,
            policy_state: PolicyState::default(),
            history: Vec::new(),
            archive: Vec::new(),
            suggestions: Vec::new(),
        }
    }

    /// Appends `record`; generations must strictly increase.
    pub fn insert(&mut self, record: AlgorithmRecord, compression: &CompressionPolicy) -> Result<()> {
        if let Some(last) = self.archive.last() {
            if record.generation <= last.generation {
                return Err(Error::InvalidArgument(format!(
                    "record generation {} not after {}",
                    record.generation, last.generation
                )));
            }
        }
        if record.parents.len() != record.action.parent_count() {
            return Err(Error::InvalidArgument(format!(
                "{} record with {} parents",
                record.action.as_str(),
                record.parents.len()
            )));
        }
        self.archive.push(record.clone());
        self.history.push(record);
        self.history = compress(&self.history, compression);
        Ok(())
    }

    pub fn best(&self) -> Option<&AlgorithmRecord> {
        ranked(&self.archive).first().copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    /// Parses a checkpoint, refusing corrupt files and foreign sessions.
    pub fn from_json(text: &str, expected_hash: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("corrupt checkpoint: {e}")))?;
        if state.version != STATE_VERSION {
            return Err(Error::InvalidArgument(format!(
                "checkpoint version {} unsupported (expected {STATE_VERSION})",
                state.version
            )));
        }
        if state.config_hash != expected_hash {
            return Err(Error::InvalidArgument(format!(
                "checkpoint belongs to config {} but this session is {expected_hash}",
                state.config_hash
            )));
        }
        if state.archive.last().is_some_and(|r| r.generation >= state.next_generation) {
            return Err(Error::InvalidArgument("corrupt checkpoint: generation cursor behind records".into()));
        }
        Ok(state)
    }
}
