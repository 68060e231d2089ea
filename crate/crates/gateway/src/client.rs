//! A minimal console: the wire client plus a scripted player used by tests
//! and by `hsi serve` smoke runs.

use std::collections::BTreeSet;
use std::io::{self, BufReader};
use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use hsi_core::rng::RngStream;
use hsi_core::sagat::{Answer, QueryKind};
use hsi_core::swarm::RobotStatus;
use hsi_core::world::{CellIndex, Vec2};
use serde::{Deserialize, Serialize};

use crate::protocol::{encode, read_frame, write_frame, ClientMessage, FrameError, ServerMessage, PROTOCOL};

pub struct Client {
    stream: TcpStream,
    reader: BufReader<TcpStream>,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self { stream, reader })
    }

    /// Retries until the server listens or `timeout` passes.
    pub fn connect_retry(addr: SocketAddr, timeout: Duration) -> io::Result<Self> {
        let deadline = Instant::now() + timeout;
        loop {
            match Self::connect(addr) {
                Ok(c) => return Ok(c),
                Err(e) if Instant::now() >= deadline => return Err(e),
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
        }
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(t)
    }

    pub fn send(&mut self, msg: &ClientMessage) -> Result<(), FrameError> {
        write_frame(&mut self.stream, &encode(msg))
    }

    pub fn send_raw(&mut self, body: &[u8]) -> Result<(), FrameError> {
        write_frame(&mut self.stream, body)
    }

    /// Next frame with its raw bytes, or `None` once the server closed.
    pub fn recv(&mut self) -> Result<Option<(Vec<u8>, ServerMessage)>, FrameError> {
        let Some(body) = read_frame(&mut self.reader)? else { return Ok(None) };
        let msg = serde_json::from_slice(&body).map_err(|e| FrameError::Io(io::Error::new(io::ErrorKind::InvalidData, e)))?;
        Ok(Some((body, msg)))
    }

    pub fn hello(&mut self, console_version: &str) -> Result<ServerMessage, FrameError> {
        self.send(&ClientMessage::Hello { protocol: PROTOCOL.into(), console_version: console_version.into() })?;
        self.recv()?
            .map(|(_, m)| m)
            .ok_or_else(|| FrameError::Io(io::Error::from(io::ErrorKind::UnexpectedEof)))
    }

    pub fn close(self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

/// How the scripted console plays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsoleScript {
    pub seed: u64,
    /// Probability of marking each alerted cell.
    pub mark_alerts: f64,
    /// Send a swipe on every n-th snapshot; 0 disables.
    pub swipe_every: u64,
    /// Probability of answering "I don't know" / "Not applicable".
    pub abstain: f64,
    /// `None` hangs up at the SART form.
    pub sart: Option<Vec<i64>>,
    /// Hang up after this many received frames.
    pub disconnect_after: Option<usize>,
}

impl Default for ConsoleScript {
    fn default() -> Self {
        Self { seed: 1, mark_alerts: 0.8, swipe_every: 25, abstain: 0.1, sart: Some(vec![4; 10]), disconnect_after: None }
    }
}

/// Everything the console saw and sent, in order.
#[derive(Clone, Debug, Default)]
pub struct ConsoleTrace {
    pub frames: Vec<Vec<u8>>,
    pub messages: Vec<ServerMessage>,
    pub sent: Vec<ClientMessage>,
}

impl ConsoleTrace {
    pub fn count(&self, type_name: &str) -> usize {
        self.messages.iter().filter(|m| m.type_name() == type_name).count()
    }

    /// Cells this console itself put on the wire.
    pub fn sent_cells(&self) -> BTreeSet<CellIndex> {
        let mut cells = BTreeSet::new();
        for m in &self.sent {
            match m {
                ClientMessage::Mark { cell } | ClientMessage::Unmark { cell } => {
                    cells.insert(*cell);
                }
                ClientMessage::SagatAnswer { answer: Answer::Cells { cells: c }, .. } => cells.extend(c.iter().copied()),
                _ => {}
            }
        }
        cells
    }
}

pub struct ScriptedConsole {
    client: Client,
    script: ConsoleScript,
    rng: RngStream,
    grid: (u32, u32),
    trace: ConsoleTrace,
}

impl ScriptedConsole {
    pub fn connect(addr: SocketAddr, script: ConsoleScript) -> Result<Self, FrameError> {
        let client = Client::connect_retry(addr, Duration::from_secs(10))?;
        let rng = RngStream::named(script.seed, "console");
        Ok(Self { client, script, rng, grid: (0, 0), trace: ConsoleTrace::default() })
    }

    fn send(&mut self, m: ClientMessage) -> Result<(), FrameError> {
        self.client.send(&m)?;
        self.trace.sent.push(m);
        Ok(())
    }

    /// Plays until SessionEnd, server close, or the scripted hang-up.
    pub fn run(mut self) -> Result<ConsoleTrace, FrameError> {
        let hello = ClientMessage::Hello { protocol: PROTOCOL.into(), console_version: "scripted-0.1".into() };
        self.send(hello)?;
        let mut snapshots = 0u64;
        while let Some((raw, msg)) = self.client.recv()? {
            self.trace.frames.push(raw);
            self.trace.messages.push(msg.clone());
            if self.script.disconnect_after.is_some_and(|n| self.trace.frames.len() >= n) {
                self.client.close();
                return Ok(self.trace);
            }
            match msg {
                ServerMessage::Welcome { world, .. } => self.grid = (world.width, world.height),
                ServerMessage::Snapshot { robots, alerts, .. } => {
                    snapshots += 1;
                    for a in &alerts {
                        for c in &a.affected_cells {
                            if self.rng.bernoulli(self.script.mark_alerts) {
                                self.send(ClientMessage::Mark { cell: *c })?;
                            }
                        }
                    }
                    if self.script.swipe_every > 0 && snapshots % self.script.swipe_every == 0 {
                        let active: Vec<Vec2> = robots.iter().filter(|r| r.status == RobotStatus::Active).map(|r| r.position).collect();
                        if let Some(origin) = self.rng.choose(&active).copied() {
                            let a = self.rng.uniform(0.0, std::f64::consts::TAU);
                            let magnitude = self.rng.uniform(0.3, 1.0);
                            self.send(ClientMessage::Swipe { origin, direction: Vec2::new(a.cos(), a.sin()), magnitude })?;
                        }
                    }
                }
                ServerMessage::QueryPrompt { query, .. } => {
                    let abstain = self.rng.bernoulli(self.script.abstain);
                    let answer = match (query.kind, abstain) {
                        (QueryKind::Mcq, true) => Answer::DontKnow,
                        (QueryKind::Mcq, false) => Answer::Choice { index: self.rng.below(query.options.as_ref().map_or(1, Vec::len)) },
                        (QueryKind::Cmq, true) => Answer::NotApplicable,
                        (QueryKind::Cmq, false) => {
                            let n = 1 + self.rng.below(4);
                            let cells = (0..n)
                                .map(|_| CellIndex::new(self.rng.below(self.grid.0 as usize) as u32, self.rng.below(self.grid.1 as usize) as u32))
                                .collect();
                            Answer::Cells { cells }
                        }
                    };
                    self.send(ClientMessage::SagatAnswer { query_id: query.query_id, answer })?;
                }
                ServerMessage::SartForm { .. } => {
                    let Some(r) = self.script.sart.clone() else {
                        self.client.close();
                        return Ok(self.trace);
                    };
                    self.send(ClientMessage::SartSubmit { ratings: r })?;
                }
                ServerMessage::SessionEnd { .. } => break,
                _ => {}
            }
        }
        Ok(self.trace)
    }
}
