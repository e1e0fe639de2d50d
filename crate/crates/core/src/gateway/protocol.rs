//! Wire records. One JSON object per line on the stdio transport; one
//! object per request/response body over HTTP.
//!
//! ```text
//! -> {"type":"hello","protocol":1}
//! <- {"type":"ready"}
//! -> {"type":"complete","request_id":"r1","prompt":"...","temperature":0.8,"seed":7,"max_tokens":1024,"meta":{"tier":0,"iteration":1,"instance_id":"t0-..."}}
//! <- {"type":"completion","request_id":"r1","text":"..."}
//! -> {"type":"train","path":"/run/seed-42/traces/iter-1.jsonl"}
//! <- {"type":"train_ack"}            (or {"type":"train_unsupported"})
//! <- {"type":"error","request_id":"r1","detail":"..."}
//! ```

use serde::{Deserialize, Serialize};

use super::{AgentRequest, AgentResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        protocol: u32,
    },
    Ready,
    Complete(AgentRequest),
    Completion(AgentResponse),
    Train {
        path: String,
    },
    TrainAck,
    TrainUnsupported,
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_id: Option<String>,
        detail: String,
    },
}

impl WireMessage {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("serializable message");
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end())
    }
}
