//! Blocking JSON-over-HTTP client shared by the model backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Environment variable holding the bearer token for model endpoints.
pub const TOKEN_ENV: &str = "PTYCHI_EVOLVE_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Extra attempts after a transport failure.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Delay before the first retry, doubled each time.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    500
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: None,
            timeout_secs: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
        }
    }
}

/// POSTs `body` once and returns the response text for 2xx replies.
pub fn post_json_once<T: Serialize>(cfg: &EndpointConfig, body: &T) -> Result<String, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();
    let mut req = agent.post(&cfg.url).header("Content-Type", "application/json");
    if let Ok(token) = std::env::var(TOKEN_ENV) {
        if !token.is_empty() {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
    }
    let payload = serde_json::to_vec(body).map_err(|e| e.to_string())?;
    let mut resp = req.send(&payload[..]).map_err(|e| format!("request to {} failed: {e}", cfg.url))?;
    let status = resp.status();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| format!("reading response from {}: {e}", cfg.url))?;
    if status.is_success() {
        Ok(text)
    } else {
        Err(format!("{} returned {status}: {}", cfg.url, text.chars().take(200).collect::<String>()))
    }
}

/// Calls `attempt` up to `1 + retries` times with doubling backoff.
pub fn with_retries<T>(
    retries: u32,
    backoff_ms: u64,
    mut attempt: impl FnMut() -> Result<T, String>,
) -> Result<T, String> {
    let mut delay = backoff_ms;
    let mut last = String::new();
    for i in 0..=retries {
        match attempt() {
            Ok(v) => return Ok(v),
            Err(e) => last = e,
        }
        if i < retries && delay > 0 {
            std::thread::sleep(Duration::from_millis(delay));
            delay = delay.saturating_mul(2);
        }
    }
    Err(format!("{} attempts failed; last error: {last}", retries + 1))
}
