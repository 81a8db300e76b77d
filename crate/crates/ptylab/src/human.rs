//! Blocking human-evaluation queue shared by the discovery loop (producer)
//! and the HTTP service (resolver).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use ptylab_core::discovery::{Candidate, CandidateEvaluator};
use ptylab_core::metrics::{EvalMode, EvalResult, TierPolicy};
use serde::Serialize;

use crate::formats::phase_png;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingTicket {
    pub ticket: String,
    pub candidate_id: String,
    pub generation: u64,
    pub layer_count: usize,
    pub technique_tags: Vec<String>,
}

#[derive(Debug)]
struct Entry {
    info: PendingTicket,
    layers: Vec<Vec<u8>>,
    result: Option<EvalResult>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResolveError {
    #[error("unknown ticket {0}")]
    NotFound(String),
    #[error("ticket {0} already resolved")]
    AlreadyResolved(String),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
}

#[derive(Debug, Default)]
pub struct HumanQueue {
    entries: Mutex<BTreeMap<String, Entry>>,
    cv: Condvar,
}

impl HumanQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues a candidate; the ticket is derived from its generation.
    pub fn request(&self, info: PendingTicket, layers: Vec<Vec<u8>>) -> String {
        let ticket = info.ticket.clone();
        self.entries.lock().expect("queue lock").insert(
            ticket.clone(),
            Entry {
                info,
                layers,
                result: None,
            },
        );
        self.cv.notify_all();
        ticket
    }

    /// Unresolved tickets ordered by generation.
    pub fn pending(&self) -> Vec<PendingTicket> {
        let mut v: Vec<PendingTicket> = self
            .entries
            .lock()
            .expect("queue lock")
            .values()
            .filter(|e| e.result.is_none())
            .map(|e| e.info.clone())
            .collect();
        v.sort_by_key(|p| p.generation);
        v
    }

    pub fn image(&self, ticket: &str, layer: usize) -> Result<Vec<u8>, ResolveError> {
        let entries = self.entries.lock().expect("queue lock");
        let e = entries.get(ticket).ok_or_else(|| ResolveError::NotFound(ticket.into()))?;
        e.layers
            .get(layer)
            .cloned()
            .ok_or_else(|| ResolveError::NotFound(format!("{ticket} layer {layer}")))
    }

    pub fn resolve(
        &self,
        ticket: &str,
        score: f64,
        feedback: Option<String>,
        suggestions: Option<String>,
        tiers: &TierPolicy,
    ) -> Result<EvalResult, ResolveError> {
        let mut entries = self.entries.lock().expect("queue lock");
        let e = entries.get_mut(ticket).ok_or_else(|| ResolveError::NotFound(ticket.into()))?;
        if e.result.is_some() {
            return Err(ResolveError::AlreadyResolved(ticket.into()));
        }
        let result = EvalResult::from_score(EvalMode::Human, score, feedback, suggestions, tiers)
            .map_err(|_| ResolveError::ScoreOutOfRange(score))?;
        e.result = Some(result.clone());
        self.cv.notify_all();
        Ok(result)
    }

    /// Blocks until `ticket` is resolved or `stop` is raised.
    pub fn wait(&self, ticket: &str, stop: &AtomicBool) -> Option<EvalResult> {
        let mut entries = self.entries.lock().expect("queue lock");
        loop {
            if let Some(r) = entries.get(ticket).and_then(|e| e.result.clone()) {
                return Some(r);
            }
            if stop.load(Ordering::SeqCst) {
                return None;
            }
            entries = self
                .cv
                .wait_timeout(entries, Duration::from_millis(200))
                .expect("queue lock")
                .0;
        }
    }

    /// Drops a ticket, e.g. when its wait was abandoned.
    pub fn withdraw(&self, ticket: &str) {
        self.entries.lock().expect("queue lock").remove(ticket);
    }
}

/// Evaluator that publishes phase images and blocks for an expert score.
pub struct HumanEvaluator {
    pub queue: Arc<HumanQueue>,
    pub stop: Arc<AtomicBool>,
    /// Raised while blocked, for status reporting.
    pub waiting: Arc<AtomicBool>,
}

pub fn ticket_for(generation: u64) -> String {
    format!("t{generation:04}")
}

impl CandidateEvaluator for HumanEvaluator {
    fn evaluate(&mut self, c: &Candidate<'_>) -> ptylab_core::Result<EvalResult> {
        let layers = (0..c.object.shape().slices)
            .map(|s| phase_png(c.object, s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ptylab_core::Error::InvalidArgument(e.to_string()))?;
        let info = PendingTicket {
            ticket: ticket_for(c.generation),
            candidate_id: c.record_id.into(),
            generation: c.generation,
            layer_count: layers.len(),
            technique_tags: c.spec.technique_tags(),
        };
        let ticket = self.queue.request(info, layers);
        self.waiting.store(true, Ordering::SeqCst);
        let result = self.queue.wait(&ticket, &self.stop);
        self.waiting.store(false, Ordering::SeqCst);
        match result {
            Some(r) => Ok(r),
            None => {
                self.queue.withdraw(&ticket);
                Err(ptylab_core::Error::Interrupted)
            }
        }
    }
}
