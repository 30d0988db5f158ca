//! Chat-completions client with image attachments.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Agent, AgentError};
use crate::protocol::{parse_turn_output, ContextPart, Message, Prompt, Role, TurnContext};
use crate::render::encode_png;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteChatConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; no auth header if unset.
    pub token_env: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Send snapshots as images; when false only their labels are sent.
    pub send_images: bool,
}

impl Default for RemoteChatConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "model".into(),
            token_env: None,
            timeout_secs: 120,
            retries: 3,
            backoff_ms: 500,
            temperature: 0.0,
            max_tokens: None,
            send_images: true,
        }
    }
}

pub struct RemoteAgent {
    config: RemoteChatConfig,
    name: String,
    http: ureq::Agent,
}

impl RemoteAgent {
    pub fn new(config: RemoteChatConfig) -> Self {
        let http: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            name: format!("remote:{}", config.model),
            config,
            http,
        }
    }

    pub fn config(&self) -> &RemoteChatConfig {
        &self.config
    }

    fn token(&self) -> Result<Option<String>, AgentError> {
        match &self.config.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| AgentError::Config(format!("environment variable {var} is not set"))),
        }
    }

    fn encode_message(&self, m: &Message) -> Value {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        let all_text = m.parts.iter().all(|p| matches!(p, ContextPart::Text(_)));
        if all_text {
            let text = m
                .parts
                .iter()
                .filter_map(|p| match p {
                    ContextPart::Text(t) => Some(t.as_str()),
                    ContextPart::Image { .. } => None,
                })
                .collect::<Vec<_>>()
                .join("\n\n");
            return json!({ "role": role, "content": text });
        }
        let parts: Vec<Value> = m
            .parts
            .iter()
            .map(|p| match p {
                ContextPart::Text(t) => json!({ "type": "text", "text": t }),
                ContextPart::Image { label, image } if self.config.send_images => {
                    let png = encode_png(image).unwrap_or_default();
                    let b64 = base64::engine::general_purpose::STANDARD.encode(png);
                    json!({
                        "type": "image_url",
                        "image_url": { "url": format!("data:image/png;base64,{b64}") },
                        "label": label,
                    })
                }
                ContextPart::Image { label, .. } => {
                    json!({ "type": "text", "text": format!("[image: {label}]") })
                }
            })
            .collect();
        json!({ "role": role, "content": parts })
    }

    fn request_body(&self, messages: &[Message]) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages.iter().map(|m| self.encode_message(m)).collect::<Vec<_>>(),
        });
        if let Some(n) = self.config.max_tokens {
            body["max_tokens"] = json!(n);
        }
        body
    }

    /// One chat call with retries on transport errors, 429 and 5xx.
    pub fn chat(&self, messages: &[Message]) -> Result<String, AgentError> {
        let token = self.token()?;
        let body = serde_json::to_string(&self.request_body(messages)).expect("body serializes");
        log::debug!(
            "POST {} model={} messages={} bytes={} auth={}",
            self.config.endpoint,
            self.config.model,
            messages.len(),
            body.len(),
            if token.is_some() { "[redacted]" } else { "none" }
        );
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let mut req = self
                .http
                .post(&self.config.endpoint)
                .header("Content-Type", "application/json");
            if let Some(t) = &token {
                req = req.header("Authorization", format!("Bearer {t}"));
            }
            let mut resp = match req.send(body.as_str()) {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    log::warn!("attempt {}: {last}", attempt + 1);
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = match resp.body_mut().read_to_string() {
                Ok(t) => t,
                Err(e) => {
                    last = e.to_string();
                    log::warn!("attempt {}: {last}", attempt + 1);
                    continue;
                }
            };
            log::debug!("status {status}, {} bytes: {text}", text.len());
            match status {
                200..=299 => return extract_content(&text),
                401 | 403 => {
                    return Err(AgentError::Config(format!("endpoint refused credentials ({status})")))
                }
                429 | 500..=599 => {
                    last = format!("status {status}");
                    log::warn!("attempt {}: {last}", attempt + 1);
                }
                _ => {
                    return Err(AgentError::Config(format!(
                        "status {status}: {}",
                        text.chars().take(200).collect::<String>()
                    )))
                }
            }
        }
        Err(AgentError::Transport(format!(
            "gave up after {} attempts: {last}",
            self.config.retries + 1
        )))
    }
}

fn extract_content(body: &str) -> Result<String, AgentError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| AgentError::Transport(format!("response is not JSON: {e}")))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        Value::Null => Ok(String::new()),
        other => Ok(other.to_string()),
    }
}

impl Agent for RemoteAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn accepts_images(&self) -> bool {
        self.config.send_images
    }

    fn take_turn(&self, ctx: &TurnContext) -> Result<String, AgentError> {
        let mut messages = ctx.to_prompt().messages;
        let first = self.chat(&messages)?;
        let error = match parse_turn_output(&first) {
            Ok(_) => return Ok(first),
            Err(e) => e,
        };
        messages.push(Message::text(Role::Assistant, first));
        messages.push(Message::text(
            Role::User,
            format!(
                "Your reply could not be used: {error}. Reply again with exactly one JSON object \
in a ```json fenced block following the schema."
            ),
        ));
        let second = self.chat(&messages)?;
        match parse_turn_output(&second) {
            Ok(_) => Ok(second),
            Err(e) => Err(AgentError::InvalidReply {
                raw: second,
                error: e.to_string(),
            }),
        }
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, AgentError> {
        self.chat(&prompt.messages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::RasterImage;

    #[test]
    fn images_become_data_urls() {
        let agent = RemoteAgent::new(RemoteChatConfig::default());
        let m = Message {
            role: Role::User,
            parts: vec![
                ContextPart::Text("hi".into()),
                ContextPart::Image {
                    label: "x".into(),
                    image: RasterImage::filled(2, 2, [1, 2, 3]),
                },
            ],
        };
        let v = agent.encode_message(&m);
        let url = v["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,iVBOR"));
    }

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"left:30"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "left:30");
        assert!(extract_content("nope").is_err());
    }

    #[test]
    fn missing_token_variable_is_config_error() {
        let agent = RemoteAgent::new(RemoteChatConfig {
            token_env: Some("IMAGERY_TEST_TOKEN_THAT_IS_NOT_SET".into()),
            ..RemoteChatConfig::default()
        });
        assert!(matches!(agent.chat(&[]), Err(AgentError::Config(_))));
    }
}
