//! Live HTTP chat-completion backend.
//!
//! Wire format: POST `{model, messages[{role, content}], temperature,
//! max_tokens}`; response `{choices[0].message.content, usage{prompt_tokens,
//! completion_tokens}}`. The API key, when configured, is read from an
//! environment variable at construction time.

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    AgentRole, BackendDescriptor, BackendError, BackendReply, ChatBackend, ChatRequest,
    MessageRole, TokenUsage,
};

const BODY_SNIPPET_LIMIT: usize = 500;

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(descriptor: &BackendDescriptor, request_timeout: Duration) -> Self {
        let api_key = descriptor
            .auth_env_var
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|key| !key.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .expect("reqwest client construction cannot fail with static options");
        HttpBackend {
            endpoint: descriptor.endpoint.clone(),
            api_key,
            client,
        }
    }
}

impl ChatBackend for HttpBackend {
    fn kind(&self) -> &str {
        "http"
    }

    fn send(&self, _role: AgentRole, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        let body = json!({
            "model": request.model_id,
            "messages": request
                .messages
                .iter()
                .map(|m| json!({
                    "role": match m.speaker {
                        MessageRole::System => "system",
                        MessageRole::User => "user",
                        MessageRole::Assistant => "assistant",
                    },
                    "content": m.text,
                }))
                .collect::<Vec<_>>(),
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });

        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().map_err(classify_reqwest)?;

        let status = response.status();
        let text = response.text().map_err(classify_reqwest)?;
        if !status.is_success() {
            return Err(BackendError::Status {
                code: status.as_u16(),
                body: snippet(&text),
            });
        }
        parse_completion(&text)
    }
}

fn classify_reqwest(err: reqwest::Error) -> BackendError {
    if err.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(err.to_string())
    }
}

fn parse_completion(text: &str) -> Result<BackendReply, BackendError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
    let choice = &value["choices"][0];
    let content = choice["message"]["content"]
        .as_str()
        .ok_or_else(|| {
            BackendError::Protocol(format!(
                "missing choices[0].message.content in: {}",
                snippet(text)
            ))
        })?
        .to_string();
    let usage = match (
        value["usage"]["prompt_tokens"].as_u64(),
        value["usage"]["completion_tokens"].as_u64(),
    ) {
        (Some(p), Some(c)) => Some(TokenUsage::new(p, c)),
        _ => None,
    };
    let truncated = choice["finish_reason"].as_str() == Some("length");
    Ok(BackendReply {
        content,
        usage,
        truncated,
    })
}

fn snippet(text: &str) -> String {
    let mut out: String = text.chars().take(BODY_SNIPPET_LIMIT).collect();
    if out.len() < text.len() {
        out.push('…');
    }
    out
}
