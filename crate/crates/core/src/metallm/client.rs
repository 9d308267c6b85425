use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn wire_name(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

pub trait ChatModel {
    /// Next assistant message given the conversation so far.
    fn complete(&mut self, messages: &[Message]) -> Result<String>;
}

/// Replays a fixed list of responses; runs out with a transport error.
#[derive(Debug, Clone, Default)]
pub struct MockModel {
    responses: VecDeque<String>,
    pub calls: usize,
}

impl MockModel {
    pub fn scripted<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            calls: 0,
        }
    }

    /// Assistant turns of a saved transcript, in order.
    pub fn from_transcript(messages: &[Message]) -> Self {
        Self::scripted(
            messages
                .iter()
                .filter(|m| m.role == Role::Assistant)
                .map(|m| m.content.clone()),
        )
    }

    /// Reads a JSON array of response strings.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let v: Vec<String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self::scripted(v))
    }

    pub fn remaining(&self) -> usize {
        self.responses.len()
    }
}

impl ChatModel for MockModel {
    fn complete(&mut self, _messages: &[Message]) -> Result<String> {
        self.calls += 1;
        self.responses
            .pop_front()
            .ok_or_else(|| Error::Transport("mock model has no scripted responses left".into()))
    }
}

/// OpenAI-compatible chat-completions endpoint. The key is only ever read
/// from the environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmEndpoint {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub retries: usize,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_temperature() -> f64 {
    0.7
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> usize {
    3
}

pub struct HttpChatModel {
    endpoint: LlmEndpoint,
    key: String,
    client: reqwest::blocking::Client,
}

impl HttpChatModel {
    pub fn new(endpoint: LlmEndpoint) -> Result<Self> {
        let key = std::env::var(&endpoint.api_key_env)
            .map_err(|_| Error::Config(format!("environment variable `{}` is not set", endpoint.api_key_env)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_s))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { endpoint, key, client })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn body(&self, messages: &[Message]) -> serde_json::Value {
        let msgs: Vec<_> = messages
            .iter()
            .map(|m| json!({"role": m.role.wire_name(), "content": m.content}))
            .collect();
        json!({
            "model": self.endpoint.model,
            "messages": msgs,
            "temperature": self.endpoint.temperature,
        })
    }

    fn once(&self, messages: &[Message]) -> Result<String> {
        let resp = self
            .client
            .post(self.url())
            .bearer_auth(&self.key)
            .json(&self.body(messages))
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Transport(format!("HTTP {status}: {text}")));
        }
        let v: serde_json::Value = serde_json::from_str(&text)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Error::Format("response has no choices[0].message.content".into()))
    }
}

impl ChatModel for HttpChatModel {
    fn complete(&mut self, messages: &[Message]) -> Result<String> {
        let mut last = None;
        for _ in 0..=self.endpoint.retries {
            match self.once(messages) {
                Ok(s) => return Ok(s),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Transport("no attempts made".into())))
    }
}
