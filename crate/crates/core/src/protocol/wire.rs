//! External-agent wire protocol.
//!
//! One JSON object per line in each direction. The engine sends an
//! [`AgentRequest`] and waits for exactly one [`AgentReply`]. Transport is a
//! child process's standard streams (`exec:<command> [args]`) or a TCP socket
//! (`tcp://host:port`).
//!
//! Requests:
//!
//! | field        | type                     | notes                                  |
//! |--------------|--------------------------|----------------------------------------|
//! | `v`          | integer                  | schema version, currently 1            |
//! | `op`         | `"open"` or `"respond"`  |                                        |
//! | `session_id` | string                   |                                        |
//! | `agent`      | string                   | the id the engine knows the agent by   |
//! | `mode`       | `"bilateral"`, `"mediated"`, `"procedural"` |                     |
//! | `round`      | integer                  | 0 for `open`                           |
//! | `devices`    | list of `{id, kind, lower, upper}` | feasible box in MW           |
//! | `previous`   | map device → MW          | the agent's latest proposal (`respond`) |
//! | `prompt`     | message                  | see below (`respond`)                  |
//!
//! The prompt is the counterpart's `counter_offer` in bilateral sessions and
//! a `consensus_update` carrying the current centroid otherwise. In mediated
//! sessions it also carries the suggested flexibility and the centroid is on
//! offer for acceptance.
//!
//! Replies carry `v` and either `message` or `error`. The message is an
//! `initial_proposal` for `open`, and an `accept`, `counter_offer` or
//! `reject` for `respond`. A `reject` without setpoints repeats the previous
//! proposal. Setpoints outside the advertised box are refused with an error
//! naming the device.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::message::{MessageKind, SessionMessage};
use crate::domain::{DeviceId, DeviceKind, DeviceSet, FeasibleBox, Setpoints};
use crate::error::AgentError;
use crate::strategy::{AgentId, Mode, Opening, Reply, Strategy, Turn};

pub const WIRE_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const BOX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),

    #[error("no reply within {0:?}")]
    Timeout(Duration),

    #[error("wire version {found} not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("setpoint {value} for {device} outside the advertised box")]
    OutOfBounds { device: DeviceId, value: f64 },

    #[error("transport error: {0}")]
    Io(#[from] io::Error),

    #[error("connection closed")]
    Closed,

    #[error("agent reported: {0}")]
    Remote(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Open,
    Respond,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireDevice {
    pub id: DeviceId,
    pub kind: DeviceKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub v: u32,
    pub op: Op,
    pub session_id: String,
    pub agent: AgentId,
    pub mode: Mode,
    pub round: u32,
    pub devices: Vec<WireDevice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<BTreeMap<DeviceId, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<SessionMessage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentReply {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<SessionMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AgentRequest {
    pub fn feasible(&self) -> Result<FeasibleBox<f64>, ProtocolError> {
        let devices = DeviceSet::new(self.devices.iter().map(|d| (d.id.clone(), d.kind)))
            .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let bound = |f: fn(&WireDevice) -> f64| -> BTreeMap<DeviceId, f64> {
            self.devices.iter().map(|d| (d.id.clone(), f(d))).collect()
        };
        let lower = Setpoints::from_map(devices.clone(), &bound(|d| d.lower));
        let upper = Setpoints::from_map(devices, &bound(|d| d.upper));
        let malformed = |e: crate::Error| ProtocolError::Malformed(e.to_string());
        FeasibleBox::new(lower.map_err(malformed)?, upper.map_err(malformed)?).map_err(malformed)
    }
}

fn wire_devices(fs: &FeasibleBox<f64>) -> Vec<WireDevice> {
    fs.devices()
        .iter()
        .enumerate()
        .map(|(i, (id, kind))| {
            let (lower, upper) = fs.bounds(i);
            WireDevice {
                id: id.clone(),
                kind,
                lower,
                upper,
            }
        })
        .collect()
}

/// Converts a wire setpoint map onto the box layout, refusing points outside it.
pub fn checked_setpoints(
    fs: &FeasibleBox<f64>,
    map: &BTreeMap<DeviceId, f64>,
) -> Result<Setpoints<f64>, ProtocolError> {
    let x = Setpoints::from_map(fs.devices().clone(), map)
        .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match fs.check(&x, BOX_TOL) {
        Ok(()) => Ok(x),
        Err(crate::Error::Infeasible { device, value, .. }) => {
            Err(ProtocolError::OutOfBounds { device, value })
        }
        Err(e) => Err(ProtocolError::Malformed(e.to_string())),
    }
}

/// A request/response channel to one external agent.
pub trait Transport {
    fn call(&mut self, line: &str, timeout: Duration) -> Result<String, ProtocolError>;
}

/// Child process speaking the protocol on stdin/stdout.
pub struct StdioTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<io::Result<String>>,
}

impl StdioTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ProtocolError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().ok_or(ProtocolError::Closed)?;
        let stdout = child.stdout.take().ok_or(ProtocolError::Closed)?;
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(StdioTransport {
            child,
            stdin,
            lines,
        })
    }
}

impl Transport for StdioTransport {
    fn call(&mut self, line: &str, timeout: Duration) -> Result<String, ProtocolError> {
        writeln!(self.stdin, "{line}")?;
        self.stdin.flush()?;
        match self.lines.recv_timeout(timeout) {
            Ok(reply) => Ok(reply?),
            Err(RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::Closed),
        }
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct TcpTransport {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl TcpTransport {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, ProtocolError> {
        let mut last = None;
        for sa in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&sa, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    let reader = BufReader::new(stream.try_clone()?);
                    return Ok(TcpTransport {
                        writer: stream,
                        reader,
                    });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.map_or(ProtocolError::Closed, ProtocolError::Io))
    }
}

impl Transport for TcpTransport {
    fn call(&mut self, line: &str, timeout: Duration) -> Result<String, ProtocolError> {
        self.writer.set_read_timeout(Some(timeout))?;
        self.writer.write_all(format!("{line}\n").as_bytes())?;
        self.writer.flush()?;
        let mut reply = String::new();
        match self.reader.read_line(&mut reply) {
            Ok(0) => Err(ProtocolError::Closed),
            Ok(_) => Ok(reply.trim_end().to_owned()),
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                Err(ProtocolError::Timeout(timeout))
            }
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Exec { program: String, args: Vec<String> },
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err("empty tcp address".into());
            }
            return Ok(Endpoint::Tcp(addr.to_owned()));
        }
        if let Some(cmd) = s.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace().map(str::to_owned);
            let program = parts.next().ok_or("empty exec command")?;
            return Ok(Endpoint::Exec {
                program,
                args: parts.collect(),
            });
        }
        Err(format!("endpoint `{s}` must start with tcp:// or exec:"))
    }
}

impl Endpoint {
    pub fn connect(&self, timeout: Duration) -> Result<Box<dyn Transport + Send>, ProtocolError> {
        Ok(match self {
            Endpoint::Tcp(addr) => Box::new(TcpTransport::connect(addr, timeout)?),
            Endpoint::Exec { program, args } => Box::new(StdioTransport::spawn(program, args)?),
        })
    }
}

/// Sends one request and decodes the reply message.
pub fn call_external_agent(
    transport: &mut dyn Transport,
    request: &AgentRequest,
    timeout: Duration,
) -> Result<SessionMessage, ProtocolError> {
    let line =
        serde_json::to_string(request).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let raw = transport.call(&line, timeout)?;
    let reply: AgentReply =
        serde_json::from_str(&raw).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if reply.v != WIRE_VERSION {
        return Err(ProtocolError::VersionMismatch {
            expected: WIRE_VERSION,
            found: reply.v,
        });
    }
    if let Some(err) = reply.error {
        return Err(ProtocolError::Remote(err));
    }
    let message = reply
        .message
        .ok_or_else(|| ProtocolError::Malformed("reply has neither message nor error".into()))?;
    message.validate().map_err(ProtocolError::Malformed)?;
    if message.round != request.round || message.session_id != request.session_id {
        return Err(ProtocolError::Malformed(format!(
            "reply for session `{}` round {} does not match the request",
            message.session_id, message.round
        )));
    }
    Ok(message)
}

/// An agent living in another process, driven over a [`Transport`].
pub struct ExternalAgent {
    id: AgentId,
    session_id: String,
    transport: Box<dyn Transport + Send>,
    timeout: Duration,
}

impl ExternalAgent {
    pub fn new(
        id: AgentId,
        session_id: impl Into<String>,
        transport: Box<dyn Transport + Send>,
    ) -> Self {
        ExternalAgent {
            id,
            session_id: session_id.into(),
            transport,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn request(&self, op: Op, mode: Mode, round: u32, fs: &FeasibleBox<f64>) -> AgentRequest {
        AgentRequest {
            v: WIRE_VERSION,
            op,
            session_id: self.session_id.clone(),
            agent: self.id.clone(),
            mode,
            round,
            devices: wire_devices(fs),
            previous: None,
            prompt: None,
        }
    }
}

impl Strategy<f64> for ExternalAgent {
    fn initial_proposal(
        &mut self,
        opening: &Opening<'_, f64>,
    ) -> Result<Setpoints<f64>, AgentError> {
        let req = self.request(Op::Open, opening.mode, 0, opening.feasible);
        let msg = call_external_agent(self.transport.as_mut(), &req, self.timeout)?;
        if msg.kind != MessageKind::InitialProposal {
            return Err(ProtocolError::Malformed(format!(
                "expected initial_proposal, got {:?}",
                msg.kind
            ))
            .into());
        }
        let map = msg
            .setpoints
            .as_ref()
            .expect("validated message carries setpoints");
        Ok(checked_setpoints(opening.feasible, map)?)
    }

    fn respond(&mut self, turn: &Turn<'_, f64>) -> Result<Reply<f64>, AgentError> {
        let mut req = self.request(Op::Respond, turn.mode, turn.round, turn.feasible);
        req.previous = Some(turn.previous.to_map());
        req.prompt = Some(prompt(&self.session_id, turn));
        let msg = call_external_agent(self.transport.as_mut(), &req, self.timeout)?;
        match msg.kind {
            MessageKind::Accept => Ok(Reply::Accept),
            MessageKind::CounterOffer => {
                let map = msg
                    .setpoints
                    .as_ref()
                    .expect("validated message carries setpoints");
                Ok(Reply::Counter {
                    setpoints: checked_setpoints(turn.feasible, map)?,
                    flexibility: msg.flexibility.unwrap_or(0.0),
                })
            }
            MessageKind::Reject => Ok(Reply::Counter {
                setpoints: turn.previous.clone(),
                flexibility: 0.0,
            }),
            other => {
                Err(ProtocolError::Malformed(format!("unexpected {other:?} in a response")).into())
            }
        }
    }
}

fn prompt(session_id: &str, turn: &Turn<'_, f64>) -> SessionMessage {
    match turn.mode {
        Mode::Bilateral => {
            let offer = turn.offer.unwrap_or(turn.reference);
            SessionMessage::new(
                session_id,
                turn.round,
                &AgentId::from("counterpart"),
                MessageKind::CounterOffer,
            )
            .with_setpoints(offer.to_map())
        }
        Mode::Mediated | Mode::Procedural => {
            let sender = if turn.mode == Mode::Mediated {
                super::MEDIATOR
            } else {
                super::ENGINE
            };
            let mut m = SessionMessage::new(
                session_id,
                turn.round,
                &AgentId::from(sender),
                MessageKind::ConsensusUpdate,
            )
            .with_setpoints(turn.reference.to_map());
            if let Some(s) = turn.suggested_flexibility {
                m = m.with_flexibility(s);
            }
            m
        }
    }
}

/// Answers requests from `reader` on `writer` with `strategy` until EOF.
pub fn serve_external_agent<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    strategy: &mut dyn Strategy<f64>,
) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match handle(&line, strategy) {
            Ok(message) => AgentReply {
                v: WIRE_VERSION,
                message: Some(message),
                error: None,
            },
            Err(e) => AgentReply {
                v: WIRE_VERSION,
                message: None,
                error: Some(e),
            },
        };
        let mut text = serde_json::to_string(&reply).map_err(io::Error::other)?;
        text.push('\n');
        writer.write_all(text.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves one TCP connection.
pub fn serve_connection(stream: TcpStream, strategy: &mut dyn Strategy<f64>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    serve_external_agent(reader, stream, strategy)
}

/// Accepts connections forever, each with a fresh strategy on its own thread.
pub fn serve_tcp<F>(listener: TcpListener, make: F) -> io::Result<()>
where
    F: Fn() -> Box<dyn Strategy<f64> + Send> + Send + Sync + 'static,
{
    let make = std::sync::Arc::new(make);
    for stream in listener.incoming() {
        let stream = stream?;
        let make = make.clone();
        thread::spawn(move || {
            let mut strategy = make();
            let _ = serve_connection(stream, strategy.as_mut());
        });
    }
    Ok(())
}

fn handle(line: &str, strategy: &mut dyn Strategy<f64>) -> Result<SessionMessage, String> {
    let probe: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("malformed request: {e}"))?;
    let v = probe.get("v").and_then(|v| v.as_u64()).unwrap_or(0);
    if v != u64::from(WIRE_VERSION) {
        return Err(format!(
            "wire version {v} not supported (expected {WIRE_VERSION})"
        ));
    }
    let req: AgentRequest =
        serde_json::from_value(probe).map_err(|e| format!("malformed request: {e}"))?;
    let fs = req.feasible().map_err(|e| e.to_string())?;
    let reply = SessionMessage::new(
        &req.session_id,
        req.round,
        &req.agent,
        MessageKind::InitialProposal,
    );
    match req.op {
        Op::Open => {
            let opening = Opening {
                mode: req.mode,
                feasible: &fs,
            };
            let x = strategy
                .initial_proposal(&opening)
                .map_err(|e| e.to_string())?;
            Ok(reply.with_setpoints(x.to_map()))
        }
        Op::Respond => {
            let previous = req
                .previous
                .as_ref()
                .ok_or("respond without previous proposal")?;
            let previous = checked_setpoints(&fs, previous).map_err(|e| e.to_string())?;
            let prompt = req.prompt.as_ref().ok_or("respond without prompt")?;
            prompt.validate()?;
            let point = prompt
                .setpoints
                .as_ref()
                .ok_or("prompt without setpoints")?;
            let point = checked_setpoints(&fs, point).map_err(|e| e.to_string())?;
            let reference = match req.mode {
                Mode::Bilateral => previous.midpoint(&point).map_err(|e| e.to_string())?,
                _ => point.clone(),
            };
            let turn = Turn {
                mode: req.mode,
                round: req.round,
                feasible: &fs,
                reference: &reference,
                offer: (req.mode != Mode::Procedural).then_some(&point),
                previous: &previous,
                suggested_flexibility: if req.mode == Mode::Mediated {
                    prompt.flexibility
                } else {
                    None
                },
            };
            match strategy.respond(&turn).map_err(|e| e.to_string())? {
                Reply::Accept => Ok(SessionMessage {
                    kind: MessageKind::Accept,
                    ..reply
                }),
                Reply::Counter {
                    setpoints,
                    flexibility,
                } => Ok(SessionMessage {
                    kind: MessageKind::CounterOffer,
                    ..reply
                }
                .with_setpoints(setpoints.to_map())
                .with_flexibility(flexibility.clamp(0.0, 1.0))),
            }
        }
    }
}
