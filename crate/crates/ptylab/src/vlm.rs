//! Vision-model evaluation: an HTTP endpoint scoring phase images from
//! exemplars or written criteria, or an injected stub scorer.

use std::path::PathBuf;

use base64::Engine as _;
use ptylab_core::discovery::{Candidate, CandidateEvaluator};
use ptylab_core::metrics::{EvalMode, EvalResult, TierPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::formats::phase_png;
use crate::http::{post_json_once, with_retries, EndpointConfig};

/// Attempts beyond the first for a failing or malformed reply.
pub const VLM_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub image: PathBuf,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum VlmPrompt {
    FewShot { exemplars: Vec<Exemplar> },
    Description { criteria: String },
}

impl VlmPrompt {
    pub fn validate(&self) -> AppResult<()> {
        match self {
            VlmPrompt::FewShot { exemplars } if exemplars.is_empty() => {
                Err(AppError::Config("few_shot evaluation needs at least one exemplar".into()))
            }
            VlmPrompt::FewShot { exemplars } => {
                if let Some(e) = exemplars.iter().find(|e| !(0.0..=1.0).contains(&e.score)) {
                    return Err(AppError::Config(format!("exemplar score {} outside [0, 1]", e.score)));
                }
                Ok(())
            }
            VlmPrompt::Description { criteria } if criteria.trim().is_empty() => {
                Err(AppError::Config("description evaluation needs criteria".into()))
            }
            VlmPrompt::Description { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExemplarPayload {
    pub image: String,
    pub score: f64,
}

/// Request body sent to the vision endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VlmRequest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Base64 PNGs, one per layer.
    pub images: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub exemplars: Vec<ExemplarPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criteria: Option<String>,
    pub instructions: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct VlmReply {
    pub score: f64,
    #[serde(default)]
    pub feedback: String,
}

pub const VLM_INSTRUCTIONS: &str = "Rate the reconstruction quality of the attached phase images on a \
continuous scale from 0 (unusable) to 1 (artifact-free, sharp). Reply with a JSON object \
{\"score\": <number in [0,1]>, \"feedback\": <short text>} and nothing else.";

pub type StubScorer = Box<dyn FnMut(&Candidate<'_>) -> Result<(f64, String), String> + Send>;

pub enum VlmClient {
    Http(EndpointConfig),
    Stub(StubScorer),
}

pub struct VlmEvaluator {
    client: VlmClient,
    prompt: VlmPrompt,
    exemplar_images: Vec<String>,
    tiers: TierPolicy,
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// Parses and range-checks a reply body.
pub fn parse_reply(text: &str) -> Result<VlmReply, String> {
    let reply: VlmReply = serde_json::from_str(text.trim()).map_err(|e| format!("malformed reply: {e}"))?;
    if !(0.0..=1.0).contains(&reply.score) {
        return Err(format!("reply score {} outside [0, 1]", reply.score));
    }
    Ok(reply)
}

impl VlmEvaluator {
    /// Validates the prompt and loads exemplar images up front.
    pub fn new(client: VlmClient, prompt: VlmPrompt, tiers: TierPolicy) -> AppResult<Self> {
        prompt.validate()?;
        let exemplar_images = match &prompt {
            VlmPrompt::FewShot { exemplars } => exemplars
                .iter()
                .map(|e| std::fs::read(&e.image).map(|b| b64(&b)).map_err(|err| AppError::io(&e.image, err)))
                .collect::<AppResult<Vec<_>>>()?,
            VlmPrompt::Description { .. } => Vec::new(),
        };
        Ok(Self {
            client,
            prompt,
            exemplar_images,
            tiers,
        })
    }

    pub fn request_body(&self, model: Option<String>, images: Vec<String>) -> VlmRequest {
        let (exemplars, criteria) = match &self.prompt {
            VlmPrompt::FewShot { exemplars } => (
                exemplars
                    .iter()
                    .zip(&self.exemplar_images)
                    .map(|(e, img)| ExemplarPayload {
                        image: img.clone(),
                        score: e.score,
                    })
                    .collect(),
                None,
            ),
            VlmPrompt::Description { criteria } => (Vec::new(), Some(criteria.clone())),
        };
        VlmRequest {
            model,
            images,
            exemplars,
            criteria,
            instructions: VLM_INSTRUCTIONS.into(),
        }
    }
}

impl CandidateEvaluator for VlmEvaluator {
    fn evaluate(&mut self, c: &Candidate<'_>) -> ptylab_core::Result<EvalResult> {
        let (score, feedback) = match &mut self.client {
            VlmClient::Stub(f) => f(c),
            VlmClient::Http(cfg) => {
                let cfg = cfg.clone();
                let images = (0..c.object.shape().slices)
                    .map(|s| phase_png(c.object, s).map(|b| b64(&b)))
                    .collect::<AppResult<Vec<_>>>()
                    .map_err(|e| ptylab_core::Error::InvalidArgument(e.to_string()))?;
                let body = self.request_body(cfg.model.clone(), images);
                with_retries(VLM_RETRIES, cfg.backoff_ms, || {
                    post_json_once(&cfg, &body).and_then(|t| parse_reply(&t))
                })
                .map(|r| (r.score, r.feedback))
            }
        }
        .map_err(|e| ptylab_core::Error::InvalidArgument(format!("vision evaluation failed: {e}")))?;
        let feedback = (!feedback.is_empty()).then_some(feedback);
        EvalResult::from_score(EvalMode::Vlm, score, feedback, None, &self.tiers)
    }
}
