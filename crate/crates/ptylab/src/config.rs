//! Session configuration file.

use std::path::{Path, PathBuf};

use ptylab_core::evolution::{CompressionPolicy, PolicyConfig};
use ptylab_core::metrics::{Aggregation, TierPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};
use crate::http::EndpointConfig;
use crate::vlm::VlmPrompt;

/// How candidates are scored. One mode per session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvaluationConfig {
    GroundTruth {
        #[serde(default)]
        aggregation: Aggregation,
    },
    Human,
    Vlm {
        endpoint: EndpointConfig,
        prompt: VlmPrompt,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    #[default]
    Scripted,
    Http {
        endpoint: EndpointConfig,
    },
}

fn default_epochs() -> usize {
    100
}

fn default_checkpoint_every() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Dataset directory written by `ptylab simulate`.
    pub dataset: PathBuf,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub compression: CompressionPolicy,
    #[serde(default)]
    pub tiers: TierPolicy,
    #[serde(default)]
    pub backend: BackendConfig,
    pub generations: u64,
    /// Reconstruction epochs per candidate.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Where history, checkpoints and the summary go.
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

impl SessionConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> AppResult<Self> {
        let mut cfg: Self = crate::formats::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.output_dir);
        if let EvaluationConfig::Vlm {
            prompt: VlmPrompt::FewShot { exemplars },
            ..
        } = &mut self.evaluation
        {
            for e in exemplars {
                fix(&mut e.image);
            }
        }
    }

    pub fn validate(&self) -> AppResult<()> {
        let core = |e: ptylab_core::Error| AppError::Config(e.to_string());
        self.policy.validate().map_err(core)?;
        self.compression.validate().map_err(core)?;
        self.tiers.validate().map_err(core)?;
        if self.epochs == 0 {
            return Err(AppError::Config("epochs must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(AppError::Config("checkpoint_every must be at least 1".into()));
        }
        if !self.dataset.join("dataset.json").exists() {
            return Err(AppError::Config(format!("no dataset at {}", self.dataset.display())));
        }
        if matches!(self.evaluation, EvaluationConfig::GroundTruth { .. })
            && !self.dataset.join("reference.ptyf").exists()
        {
            return Err(AppError::Config("ground_truth evaluation needs a dataset with a reference".into()));
        }
        if let EvaluationConfig::Vlm { prompt, .. } = &self.evaluation {
            prompt.validate()?;
        }
        Ok(())
    }

    /// Identity of everything that shapes the search. The generation budget
    /// and output location are excluded so a session can be extended or
    /// moved and still resume.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.generations = 0;
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
