//! A discovery session on disk: resume, run generations, persist history
//! and checkpoints, and publish read-consistent snapshots for the service.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use ptylab_core::discovery::{
    run_generation, CandidateEvaluator, DiscoveryConfig, GroundTruthEvaluator, SpecBackend, StepError,
};
use ptylab_core::evolution::{ActionCounts, AlgorithmRecord, DiscoveryState, TierCounts};
use ptylab_core::recon::ReconConfig;
use ptylab_core::scripted::ScriptedBackend;
use ptylab_core::sim::Dataset;
use serde::Serialize;

use crate::config::{BackendConfig, EvaluationConfig, SessionConfig};
use crate::error::{AppError, AppResult};
use crate::formats;
use crate::human::{HumanEvaluator, HumanQueue};
use crate::llm::HttpBackend;
use crate::vlm::{VlmClient, VlmEvaluator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Paused,
    AwaitingHuman,
    Finished,
}

/// What the service may read while the loop runs.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub generation: u64,
    pub generations: u64,
    pub best_score: Option<f64>,
    pub best_id: Option<String>,
    pub tier_counts: TierCounts,
    pub action_counts: ActionCounts,
    pub state: RunState,
    #[serde(skip)]
    pub history: Vec<AlgorithmRecord>,
    #[serde(skip)]
    pub archive: Vec<AlgorithmRecord>,
}

impl Snapshot {
    fn of(state: &DiscoveryState, generations: u64, run: RunState) -> Self {
        let best = state.best();
        Self {
            generation: state.next_generation,
            generations,
            best_score: best.and_then(|b| b.score()),
            best_id: best.map(|b| b.id.clone()),
            tier_counts: TierCounts::from_records(&state.archive),
            action_counts: ActionCounts::from_records(&state.archive),
            state: run,
            history: state.history.clone(),
            archive: state.archive.clone(),
        }
    }
}

pub struct SessionShared {
    pub snapshot: RwLock<Snapshot>,
    pub queue: Arc<HumanQueue>,
    /// Raised by signals or the host to stop at the next boundary.
    pub stop: Arc<AtomicBool>,
    pub waiting: Arc<AtomicBool>,
    pub tiers: ptylab_core::metrics::TierPolicy,
}

impl SessionShared {
    pub fn read(&self) -> Snapshot {
        let mut s = self.snapshot.read().expect("snapshot lock").clone();
        if s.state == RunState::Running && self.waiting.load(Ordering::SeqCst) {
            s.state = RunState::AwaitingHuman;
        }
        s
    }

    fn publish(&self, s: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = s;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    Interrupted,
    /// Backend unreachable.
    Paused(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub algorithms: usize,
    pub successful: usize,
    pub success_rate: f64,
    pub best_score: Option<f64>,
    pub best_id: Option<String>,
    pub duration_secs: f64,
    pub action_counts: ActionCounts,
    pub tier_counts: TierCounts,
}

impl Summary {
    pub fn from_records(records: &[AlgorithmRecord], duration: Duration) -> Self {
        let successful = records.iter().filter(|r| r.is_successful()).count();
        let best = ptylab_core::evolution::ranked(records).first().copied();
        Self {
            algorithms: records.len(),
            successful,
            success_rate: if records.is_empty() {
                0.0
            } else {
                successful as f64 / records.len() as f64
            },
            best_score: best.and_then(|b| b.score()),
            best_id: best.map(|b| b.id.clone()),
            duration_secs: duration.as_secs_f64(),
            action_counts: ActionCounts::from_records(records),
            tier_counts: TierCounts::from_records(records),
        }
    }

    pub fn table(&self) -> String {
        let best = self.best_score.map_or("-".to_string(), |s| format!("{s:.4}"));
        format!(
            "{:<12} {:>10} {:>12} {:>12}\n{:<12} {:>10} {:>11.1}% {:>12}\n",
            "algorithms",
            "success",
            "best score",
            "duration",
            self.algorithms,
            self.successful,
            100.0 * self.success_rate,
            best,
        ) + &format!("duration {:.1} s\n", self.duration_secs)
    }
}

pub struct Session {
    pub config: SessionConfig,
    pub dataset: Dataset,
    pub state: DiscoveryState,
    pub shared: Arc<SessionShared>,
    hash: String,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Session {
    /// Loads the dataset and resumes from the newest checkpoint in the
    /// output directory. A checkpoint that is corrupt or belongs to another
    /// config is an error, never a silent restart.
    pub fn open(config: SessionConfig) -> AppResult<Self> {
        config.validate()?;
        let dataset = formats::load_dataset(&config.dataset)?;
        let dir = &config.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        let hash = config.hash();
        let state = match formats::latest_checkpoint(dir)? {
            Some(p) => formats::read_checkpoint(&p, &hash)?,
            None => DiscoveryState::new(hash.clone(), config.seed),
        };
        formats::write_history(&dir.join("history.jsonl"), &state.history)?;
        formats::write_history(&dir.join("archive.jsonl"), &state.archive)?;
        let shared = Arc::new(SessionShared {
            snapshot: RwLock::new(Snapshot::of(&state, config.generations, RunState::Paused)),
            queue: Arc::new(HumanQueue::new()),
            stop: Arc::new(AtomicBool::new(false)),
            waiting: Arc::new(AtomicBool::new(false)),
            tiers: config.tiers.clone(),
        });
        Ok(Self {
            config,
            dataset,
            state,
            shared,
            hash,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn dir(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn discovery_config(&self) -> DiscoveryConfig {
        let mut recon = ReconConfig::new(self.config.epochs);
        recon.track_metrics = false;
        DiscoveryConfig {
            archetype: self.dataset.archetype.unwrap_or(ptylab_core::sim::Archetype::Multislice),
            policy: self.config.policy.clone(),
            compression: self.config.compression.clone(),
            tiers: self.config.tiers.clone(),
            recon,
        }
    }

    pub fn backend(&self) -> Box<dyn SpecBackend + Send> {
        match &self.config.backend {
            BackendConfig::Scripted => Box::new(ScriptedBackend::default()),
            BackendConfig::Http { endpoint } => Box::new(HttpBackend {
                endpoint: endpoint.clone(),
            }),
        }
    }

    pub fn evaluator(&self) -> AppResult<Box<dyn CandidateEvaluator + Send>> {
        Ok(match &self.config.evaluation {
            EvaluationConfig::GroundTruth { aggregation } => Box::new(GroundTruthEvaluator {
                reference: self.dataset.reference.clone().ok_or(ptylab_core::Error::MissingReference)?,
                strategy: *aggregation,
                tiers: self.config.tiers.clone(),
            }),
            EvaluationConfig::Human => Box::new(HumanEvaluator {
                queue: self.shared.queue.clone(),
                stop: self.shared.stop.clone(),
                waiting: self.shared.waiting.clone(),
            }),
            EvaluationConfig::Vlm { endpoint, prompt } => Box::new(VlmEvaluator::new(
                VlmClient::Http(endpoint.clone()),
                prompt.clone(),
                self.config.tiers.clone(),
            )?),
        })
    }

    pub fn checkpoint(&self) -> AppResult<PathBuf> {
        formats::write_checkpoint(self.dir(), &self.state)
    }

    /// Runs until the generation budget is spent, `stop` is raised, or the
    /// backend becomes unreachable. `after` sees every new record and may
    /// raise the stop flag itself.
    pub fn run(
        &mut self,
        backend: &mut dyn SpecBackend,
        evaluator: &mut dyn CandidateEvaluator,
        after: &mut dyn FnMut(&AlgorithmRecord, &AtomicBool),
    ) -> AppResult<StopReason> {
        let cfg = self.discovery_config();
        let history_path = self.dir().join("history.jsonl");
        let archive_path = self.dir().join("archive.jsonl");
        let generations = self.config.generations;
        self.shared
            .publish(Snapshot::of(&self.state, generations, RunState::Running));
        let reason = loop {
            if self.state.next_generation >= generations {
                break StopReason::Completed;
            }
            if self.shared.stop.load(Ordering::SeqCst) {
                break StopReason::Interrupted;
            }
            let before = self.state.history.len();
            let step = run_generation(&mut self.state, &cfg, &self.dataset, backend, evaluator, now_ms());
            let record = match step {
                Ok(r) => r.clone(),
                Err(StepError::Interrupted) => break StopReason::Interrupted,
                Err(StepError::Paused(m)) => break StopReason::Paused(m),
                Err(StepError::Fatal(e)) => return Err(e.into()),
            };
            formats::append_history(&archive_path, &record)?;
            if self.state.history.len() == before + 1 {
                formats::append_history(&history_path, &record)?;
            } else {
                formats::write_history(&history_path, &self.state.history)?;
            }
            if self.state.next_generation.is_multiple_of(self.config.checkpoint_every) {
                self.checkpoint()?;
            }
            self.shared
                .publish(Snapshot::of(&self.state, generations, RunState::Running));
            after(&record, &self.shared.stop);
        };
        self.checkpoint()?;
        let run = match reason {
            StopReason::Completed => RunState::Finished,
            _ => RunState::Paused,
        };
        self.shared.publish(Snapshot::of(&self.state, generations, run));
        Ok(reason)
    }

    /// Runs with the configured backend and evaluator, then writes
    /// `summary.json`.
    pub fn run_configured(&mut self) -> AppResult<(StopReason, Summary)> {
        let started = Instant::now();
        let mut backend = self.backend();
        let mut evaluator = self.evaluator()?;
        let reason = self.run(backend.as_mut(), evaluator.as_mut(), &mut |_, _| {})?;
        let summary = Summary::from_records(&self.state.archive, started.elapsed());
        formats::write_json(&self.dir().join("summary.json"), &summary)?;
        Ok((reason, summary))
    }
}
