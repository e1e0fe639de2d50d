//! Child-process transport: line-delimited JSON over stdin/stdout.
//!
//! Writes are serialized through one lock. A reader thread routes each
//! completion to the waiting caller by `request_id`, so any number of
//! requests may be outstanding and replies may arrive in any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::protocol::WireMessage;
use super::{Agent, AgentError, AgentRequest, AgentResponse, TrainReply, PROTOCOL_VERSION};

type Reply = Result<WireMessage, AgentError>;

#[derive(Default)]
struct Routes {
    pending: HashMap<String, Sender<Reply>>,
    control: Option<Sender<Reply>>,
    /// Set once the agent's output stream closes.
    closed: Option<String>,
}

pub struct StdioAgent {
    writer: Mutex<Box<dyn Write + Send>>,
    routes: Arc<Mutex<Routes>>,
    control_lock: Mutex<()>,
    timeout: Duration,
    child: Option<Mutex<Child>>,
}

impl StdioAgent {
    /// Spawns `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, AgentError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AgentError::Transport(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut agent = Self::from_streams(BufReader::new(stdout), stdin, timeout, false)?;
        agent.child = Some(Mutex::new(child));
        agent.handshake()?;
        Ok(agent)
    }

    /// Wraps an already-connected pair of streams. With `handshake`, the
    /// hello/ready exchange runs before returning.
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
        handshake: bool,
    ) -> Result<Self, AgentError> {
        let routes = Arc::new(Mutex::new(Routes::default()));
        let reader_routes = routes.clone();
        thread::Builder::new()
            .name("stdio-agent-reader".into())
            .spawn(move || read_loop(reader, reader_routes))
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        let agent = StdioAgent {
            writer: Mutex::new(Box::new(writer)),
            routes,
            control_lock: Mutex::new(()),
            timeout,
            child: None,
        };
        if handshake {
            agent.handshake()?;
        }
        Ok(agent)
    }

    fn handshake(&self) -> Result<(), AgentError> {
        match self.control(&WireMessage::Hello { protocol: PROTOCOL_VERSION })? {
            WireMessage::Ready => Ok(()),
            other => Err(AgentError::Protocol(format!("expected ready, got {other:?}"))),
        }
    }

    fn send(&self, msg: &WireMessage) -> Result<(), AgentError> {
        let mut w = self.writer.lock().unwrap();
        w.write_all(msg.to_line().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| AgentError::Transport(format!("write failed: {e}")))
    }

    fn wait(&self, rx: &Receiver<Reply>) -> Reply {
        match rx.recv_timeout(self.timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => Err(AgentError::Timeout(self.timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => Err(AgentError::Transport("agent closed".into())),
        }
    }

    /// One control exchange (hello or train); these carry no request id, so
    /// only one is in flight at a time.
    fn control(&self, msg: &WireMessage) -> Reply {
        let _guard = self.control_lock.lock().unwrap();
        let (tx, rx) = mpsc::channel();
        {
            let mut routes = self.routes.lock().unwrap();
            if let Some(why) = &routes.closed {
                return Err(AgentError::Transport(why.clone()));
            }
            routes.control = Some(tx);
        }
        self.send(msg)?;
        let reply = self.wait(&rx);
        self.routes.lock().unwrap().control = None;
        reply
    }
}

fn read_loop(reader: impl BufRead, routes: Arc<Mutex<Routes>>) {
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let msg = WireMessage::from_line(&line);
        let mut r = routes.lock().unwrap();
        match msg {
            Ok(WireMessage::Completion(resp)) => {
                if let Some(tx) = r.pending.remove(&resp.request_id) {
                    let _ = tx.send(Ok(WireMessage::Completion(resp)));
                }
            }
            Ok(WireMessage::Error { request_id: Some(id), detail }) => {
                if let Some(tx) = r.pending.remove(&id) {
                    let _ = tx.send(Err(AgentError::Remote(detail)));
                }
            }
            Ok(WireMessage::Error { request_id: None, detail }) => {
                if let Some(tx) = r.control.take() {
                    let _ = tx.send(Err(AgentError::Remote(detail)));
                }
            }
            Ok(msg @ (WireMessage::Ready | WireMessage::TrainAck | WireMessage::TrainUnsupported)) => {
                if let Some(tx) = r.control.take() {
                    let _ = tx.send(Ok(msg));
                }
            }
            Ok(other) => {
                if let Some(tx) = r.control.take() {
                    let _ = tx.send(Err(AgentError::Protocol(format!("unexpected {other:?}"))));
                }
            }
            // Unattributable garbage: the affected request times out.
            Err(_) => {}
        }
    }
    let mut r = routes.lock().unwrap();
    let why = "agent process closed its output".to_string();
    for (_, tx) in r.pending.drain() {
        let _ = tx.send(Err(AgentError::Transport(why.clone())));
    }
    if let Some(tx) = r.control.take() {
        let _ = tx.send(Err(AgentError::Transport(why.clone())));
    }
    r.closed = Some(why);
}

impl Agent for StdioAgent {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        let (tx, rx) = mpsc::channel();
        {
            let mut routes = self.routes.lock().unwrap();
            if let Some(why) = &routes.closed {
                return Err(AgentError::Transport(why.clone()));
            }
            if routes.pending.insert(request.request_id.clone(), tx).is_some() {
                return Err(AgentError::Protocol(format!("duplicate request id `{}`", request.request_id)));
            }
        }
        if let Err(e) = self.send(&WireMessage::Complete(request.clone())) {
            self.routes.lock().unwrap().pending.remove(&request.request_id);
            return Err(e);
        }
        let reply = self.wait(&rx);
        self.routes.lock().unwrap().pending.remove(&request.request_id);
        match reply? {
            WireMessage::Completion(resp) => Ok(resp),
            other => Err(AgentError::Protocol(format!("unexpected {other:?}"))),
        }
    }

    fn train(&self, traces: &Path) -> Result<TrainReply, AgentError> {
        match self.control(&WireMessage::Train { path: traces.display().to_string() })? {
            WireMessage::TrainAck => Ok(TrainReply::Ack),
            WireMessage::TrainUnsupported => Ok(TrainReply::Unsupported),
            other => Err(AgentError::Protocol(format!("unexpected {other:?}"))),
        }
    }
}

impl Drop for StdioAgent {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let mut child = child.lock().unwrap();
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
