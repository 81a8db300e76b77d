//! Spec generation through an external chat-completion service.

use ptylab_core::discovery::{Correction, GenerationContext, ProposalError, SpecBackend};
use ptylab_core::pipeline::{registry, PipelineSpec, MAX_OPS};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::http::{post_json_once, with_retries, EndpointConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub messages: Vec<ChatMessage>,
}

/// Fixed system prompt: the DSL contract followed by the operator registry.
pub fn system_prompt() -> String {
    let registry = serde_json::to_string_pretty(registry()).expect("registry serializes");
    format!(
        "You design regularizers for ptychographic reconstruction as pipeline specs.\n\
         Reply with exactly one JSON object of the form\n\
         {{\"description\": string, \"ops\": [{{\"name\": string, \"params\": {{name: number|bool}}}}], \
         \"epoch_scale\": number (optional, default 1)}}.\n\
         Rules: 1 to {MAX_OPS} ops; only registry operators and parameters; values inside bounds; \
         integer and even-integer parameters must be whole; gradient modifiers and the single \
         step-applier need a pending gradient from an earlier gradient producer; every pending \
         gradient must be consumed by a step-applier; post-normalizers come last.\n\
         Operator registry:\n{registry}"
    )
}

#[derive(Serialize)]
struct UserPayload<'a> {
    context: &'a GenerationContext,
    #[serde(skip_serializing_if = "<[Correction]>::is_empty")]
    corrections: &'a [Correction],
}

pub fn user_prompt(ctx: &GenerationContext, corrections: &[Correction]) -> String {
    let payload = serde_json::to_string_pretty(&UserPayload { context: ctx, corrections }).expect("context serializes");
    let task = if corrections.is_empty() {
        "Produce the spec for the requested action."
    } else {
        "Your previous replies were rejected for the listed violations. Produce a corrected spec."
    };
    format!("{task}\n{payload}")
}

pub fn chat_request(model: Option<String>, ctx: &GenerationContext, corrections: &[Correction]) -> ChatRequest {
    ChatRequest {
        model,
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: system_prompt(),
            },
            ChatMessage {
                role: "user".into(),
                content: user_prompt(ctx, corrections),
            },
        ],
    }
}

/// Assistant text from an OpenAI-style reply, a `{"content": ...}` reply,
/// or the raw body.
pub fn reply_content(body: &str) -> String {
    if let Ok(v) = serde_json::from_str::<Value>(body) {
        if let Some(s) = v.pointer("/choices/0/message/content").and_then(Value::as_str) {
            return s.to_string();
        }
        if let Some(s) = v.get("content").and_then(Value::as_str) {
            return s.to_string();
        }
    }
    body.to_string()
}

/// Top-level JSON objects embedded in free text. Parsing restarts at every
/// `{` not already inside a found object, so stray braces in prose are
/// skipped rather than unbalancing the scan.
fn object_spans(text: &str) -> Vec<&str> {
    let mut spans = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(_))) => {
                let end = start + stream.byte_offset();
                spans.push(&text[start..end]);
                i = end;
            }
            _ => i = start + 1,
        }
    }
    spans
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |n| n + 1);
        let body = &after[body_start..];
        let Some(close) = body.find("```") else { break };
        out.push(&body[..close]);
        rest = &body[close + 3..];
    }
    out
}

fn unique(candidates: Vec<&str>) -> Result<Option<PipelineSpec>, String> {
    let mut found: Vec<PipelineSpec> = Vec::new();
    for c in candidates {
        if let Ok(spec) = serde_json::from_str::<PipelineSpec>(c.trim()) {
            if !found.contains(&spec) {
                found.push(spec);
            }
        }
    }
    match found.len() {
        0 => Ok(None),
        1 => Ok(found.pop()),
        n => Err(format!("reply contains {n} different pipeline specs; expected exactly one")),
    }
}

/// Finds the single pipeline spec in a model reply: the whole text, then
/// fenced code blocks, then JSON objects embedded in prose.
pub fn extract_spec(text: &str) -> Result<PipelineSpec, String> {
    for pass in [vec![text], fenced_blocks(text), object_spans(text)] {
        if let Some(spec) = unique(pass)? {
            return Ok(spec);
        }
    }
    Err("reply contains no JSON object parseable as a pipeline spec".into())
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub endpoint: EndpointConfig,
}

impl SpecBackend for HttpBackend {
    fn propose(
        &mut self,
        ctx: &GenerationContext,
        corrections: &[Correction],
    ) -> Result<PipelineSpec, ProposalError> {
        let body = chat_request(self.endpoint.model.clone(), ctx, corrections);
        let text = with_retries(self.endpoint.retries, self.endpoint.backoff_ms, || {
            post_json_once(&self.endpoint, &body)
        })
        .map_err(ProposalError::Unavailable)?;
        let content = reply_content(&text);
        extract_spec(&content).map_err(|message| ProposalError::Invalid {
            response: content,
            message,
        })
    }
}
