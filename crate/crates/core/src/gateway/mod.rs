//! The agent boundary.
//!
//! An [`Agent`] turns an [`AgentRequest`] (a prompt plus sampling
//! parameters) into an [`AgentResponse`]. External agents speak a
//! line-delimited JSON protocol over a child process's stdio ([`StdioAgent`])
//! or HTTP ([`HttpAgent`]); built-in mocks ([`OracleAgent`], [`NoisyAgent`],
//! [`FailingAgent`], [`ScriptedAgent`]) make every loop runnable offline.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::InstanceLookup;

mod http;
mod mock;
pub mod protocol;
mod stdio;

pub use http::HttpAgent;
pub use mock::{Corruption, FailingAgent, NoisyAgent, OracleAgent, ScriptedAgent, SkillSchedule};
pub use protocol::WireMessage;
pub use stdio::StdioAgent;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const PROTOCOL_VERSION: u32 = 1;

/// Loop-attached request metadata. Mock agents need it; real agents may
/// ignore it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub tier: u8,
    pub iteration: u32,
    pub instance_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub request_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<RequestMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub request_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainReply {
    Ack,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum AgentError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("agent timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol error: {0}")]
    Protocol(String),
    /// The agent answered with an error record.
    #[error("agent reported an error: {0}")]
    Remote(String),
    #[error("request carries no tier/iteration metadata")]
    MissingMetadata,
}

pub trait Agent: Send + Sync {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError>;

    /// Delivers a trace file for training. Agents without a trainer reply
    /// [`TrainReply::Unsupported`].
    fn train(&self, traces: &Path) -> Result<TrainReply, AgentError>;
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        (**self).complete(request)
    }

    fn train(&self, traces: &Path) -> Result<TrainReply, AgentError> {
        (**self).train(traces)
    }
}

impl<A: Agent + ?Sized> Agent for Arc<A> {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        (**self).complete(request)
    }

    fn train(&self, traces: &Path) -> Result<TrainReply, AgentError> {
        (**self).train(traces)
    }
}

/// `stdio:CMD`, `http:URL` or `mock:NAME`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentSpec {
    Stdio(String),
    Http(String),
    Mock(MockKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockKind {
    Oracle,
    Noisy,
    Fail,
}

impl FromStr for AgentSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("stdio", cmd)) if !cmd.trim().is_empty() => Ok(AgentSpec::Stdio(cmd.to_string())),
            Some(("http", rest)) if !rest.is_empty() => {
                // `http:URL`, where URL itself may start with http:// or https://.
                let url = if rest.starts_with("//") { format!("http:{rest}") } else { rest.to_string() };
                Ok(AgentSpec::Http(url))
            }
            Some(("mock", "oracle")) => Ok(AgentSpec::Mock(MockKind::Oracle)),
            Some(("mock", "noisy")) => Ok(AgentSpec::Mock(MockKind::Noisy)),
            Some(("mock", "fail")) => Ok(AgentSpec::Mock(MockKind::Fail)),
            Some(("mock", other)) => Err(format!("unknown mock agent `{other}` (expected oracle, noisy or fail)")),
            _ => Err(format!("bad agent `{s}` (expected stdio:CMD, http:URL or mock:NAME)")),
        }
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentSpec::Stdio(cmd) => write!(f, "stdio:{cmd}"),
            AgentSpec::Http(url) => write!(f, "http:{url}"),
            AgentSpec::Mock(MockKind::Oracle) => f.write_str("mock:oracle"),
            AgentSpec::Mock(MockKind::Noisy) => f.write_str("mock:noisy"),
            AgentSpec::Mock(MockKind::Fail) => f.write_str("mock:fail"),
        }
    }
}

/// Builds a fresh agent for `spec`. Mock agents answer from `lookup`;
/// `skills` configures the noisy mock.
pub fn connect(
    spec: &AgentSpec,
    lookup: Arc<dyn InstanceLookup>,
    skills: &SkillSchedule,
    timeout: Duration,
) -> Result<Box<dyn Agent>, AgentError> {
    Ok(match spec {
        AgentSpec::Stdio(cmd) => Box::new(StdioAgent::spawn(cmd, timeout)?),
        AgentSpec::Http(url) => Box::new(HttpAgent::new(url, timeout)),
        AgentSpec::Mock(MockKind::Oracle) => Box::new(OracleAgent::new(lookup)),
        AgentSpec::Mock(MockKind::Noisy) => Box::new(NoisyAgent::new(skills.clone(), lookup)),
        AgentSpec::Mock(MockKind::Fail) => Box::new(FailingAgent),
    })
}
