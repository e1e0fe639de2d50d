//! HTTP transport: each wire record is POSTed as a JSON body to one
//! endpoint, and the reply record comes back as the response body.

use std::path::Path;
use std::time::Duration;

use super::protocol::WireMessage;
use super::{Agent, AgentError, AgentRequest, AgentResponse, TrainReply};

pub struct HttpAgent {
    endpoint: String,
    client: ureq::Agent,
    timeout: Duration,
}

impl HttpAgent {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let client = ureq::AgentBuilder::new().timeout(timeout).build();
        HttpAgent { endpoint: endpoint.to_string(), client, timeout }
    }

    fn post(&self, msg: &WireMessage) -> Result<WireMessage, AgentError> {
        let body = serde_json::to_string(msg).expect("serializable message");
        let resp = self.client.post(&self.endpoint).set("Content-Type", "application/json").send_string(&body);
        let text = match resp {
            Ok(r) => r.into_string().map_err(|e| AgentError::Transport(e.to_string()))?,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                return Err(AgentError::Transport(format!("HTTP {code}: {}", detail.trim())));
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("Timeout") {
                    return Err(AgentError::Timeout(self.timeout.as_millis() as u64));
                }
                return Err(AgentError::Transport(msg));
            }
        };
        WireMessage::from_line(&text).map_err(|e| AgentError::Protocol(format!("bad reply: {e}")))
    }
}

impl Agent for HttpAgent {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        match self.post(&WireMessage::Complete(request.clone()))? {
            WireMessage::Completion(resp) if resp.request_id == request.request_id => Ok(resp),
            WireMessage::Completion(resp) => {
                Err(AgentError::Protocol(format!("reply for `{}` answered `{}`", request.request_id, resp.request_id)))
            }
            WireMessage::Error { detail, .. } => Err(AgentError::Remote(detail)),
            other => Err(AgentError::Protocol(format!("unexpected {other:?}"))),
        }
    }

    /// Endpoints that reject the record (404/405/501) or reply
    /// `train_unsupported` have no trainer.
    fn train(&self, traces: &Path) -> Result<TrainReply, AgentError> {
        match self.post(&WireMessage::Train { path: traces.display().to_string() }) {
            Ok(WireMessage::TrainAck) => Ok(TrainReply::Ack),
            Ok(WireMessage::TrainUnsupported) => Ok(TrainReply::Unsupported),
            Ok(WireMessage::Error { detail, .. }) => Err(AgentError::Remote(detail)),
            Ok(other) => Err(AgentError::Protocol(format!("unexpected {other:?}"))),
            Err(AgentError::Transport(msg))
                if msg.starts_with("HTTP 404") || msg.starts_with("HTTP 405") || msg.starts_with("HTTP 501") =>
            {
                Ok(TrainReply::Unsupported)
            }
            Err(e) => Err(e),
        }
    }
}
