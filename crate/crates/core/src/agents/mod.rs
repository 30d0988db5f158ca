//! Reasoning agents: the remote chat client, scripted strategies and probe
//! helpers. All of them talk to the loop through raw reply text.

use std::collections::HashMap;

use thiserror::Error;

use crate::protocol::{Prompt, TurnContext};

mod probe;
mod remote;
mod scripted;

pub use probe::{
    parse_probe_reply, predicted_direction, probe_prompt, ProbePrediction, PROBE_INSTRUCTION,
};
pub use remote::{RemoteAgent, RemoteChatConfig};
pub use scripted::{
    OrbitSearchAgent, OrbitSearchConfig, ResetMatchAgent, ScriptedState, VoxelOracleAgent,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    /// Network failure, timeout or server error after all retries.
    #[error("transport: {0}")]
    Transport(String),
    /// Bad credentials, unknown model, missing dataset and similar.
    #[error("config: {0}")]
    Config(String),
    /// The reply could not be used even after a repair round-trip.
    #[error("invalid reply: {error}")]
    InvalidReply { raw: String, error: String },
    #[error("{0} does not support this request")]
    Unsupported(String),
}

pub trait Agent: Send + Sync {
    fn name(&self) -> &str;

    fn accepts_images(&self) -> bool;

    /// One loop turn: returns the raw reply text.
    fn take_turn(&self, ctx: &TurnContext) -> Result<String, AgentError>;

    /// A free-form request outside the loop (probes).
    fn complete(&self, prompt: &Prompt) -> Result<String, AgentError> {
        let _ = prompt;
        Err(AgentError::Unsupported(self.name().to_string()))
    }
}

/// Replies chosen by iteration: reply `i` is used on iteration `i + 1`, the
/// last one repeats. `{iteration}` in a reply is replaced by the iteration
/// number.
#[derive(Debug, Clone)]
pub struct ScriptedReplies {
    name: String,
    replies: Vec<String>,
}

impl ScriptedReplies {
    pub fn new(name: impl Into<String>, replies: Vec<String>) -> Self {
        assert!(!replies.is_empty(), "need at least one reply");
        Self {
            name: name.into(),
            replies,
        }
    }
}

impl Agent for ScriptedReplies {
    fn name(&self) -> &str {
        &self.name
    }

    fn accepts_images(&self) -> bool {
        false
    }

    fn take_turn(&self, ctx: &TurnContext) -> Result<String, AgentError> {
        let i = (ctx.iteration as usize).saturating_sub(1).min(self.replies.len() - 1);
        Ok(self.replies[i].replace("{iteration}", &ctx.iteration.to_string()))
    }
}

/// Answers free-form prompts by looking up the prompt tag.
#[derive(Debug, Clone, Default)]
pub struct TaggedReplies {
    name: String,
    replies: HashMap<String, String>,
    fallback: Option<String>,
}

impl TaggedReplies {
    pub fn new(name: impl Into<String>, replies: HashMap<String, String>) -> Self {
        Self {
            name: name.into(),
            replies,
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }
}

impl Agent for TaggedReplies {
    fn name(&self) -> &str {
        &self.name
    }

    fn accepts_images(&self) -> bool {
        true
    }

    fn take_turn(&self, ctx: &TurnContext) -> Result<String, AgentError> {
        self.complete(&ctx.to_prompt())
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, AgentError> {
        prompt
            .tag
            .as_ref()
            .and_then(|t| self.replies.get(t))
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| AgentError::Config(format!("no reply for tag {:?}", prompt.tag)))
    }
}
