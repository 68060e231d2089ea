use std::io::{self, BufWriter};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use hsi_core::intervention::{ActionKind, OperatorAction, OperatorView};
use hsi_core::hazard::AlertMessage;
use hsi_core::sagat::{SagatResponse, Truth};
use hsi_core::sart::{score_sart, CONSTRUCTS};
use hsi_core::session::{
    run_session, EndStatus, LineSink, Operator, OperatorGone, QueryPrompt, RunOutcome, SessionError, SessionEvent,
    SessionSetup,
};
use hsi_core::world::CellIndex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{encode, read_frame, write_frame, ClientMessage, PromptView, RejectReason, ServerMessage, WorldView, PROTOCOL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// Snapshots per wall-clock second at `time_scale`.
    pub render_hz: f64,
    /// Simulated seconds per wall second. `None` runs unpaced.
    pub time_scale: Option<f64>,
    /// How long a fresh connection has to send Hello.
    pub hello_timeout_ms: u64,
    /// Socket write timeout; a console that stops reading for this long is dropped.
    pub write_timeout_ms: u64,
    /// Outbound queue depth. Snapshots are dropped when it is full.
    pub outbound_capacity: usize,
    /// Inbound queue depth. The reader blocks when it is full; actions are never dropped.
    pub inbound_capacity: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            render_hz: 10.0,
            time_scale: Some(1.0),
            hello_timeout_ms: 30_000,
            write_timeout_ms: 10_000,
            outbound_capacity: 64,
            inbound_capacity: 4096,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.into()));
        if !(self.render_hz > 0.0 && self.render_hz.is_finite()) {
            return bad("render_hz must be positive");
        }
        if self.time_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("time_scale must be positive");
        }
        if self.outbound_capacity == 0 || self.inbound_capacity == 0 {
            return bad("queue capacities must be at least 1");
        }
        Ok(())
    }

    /// Ticks between sent snapshots.
    pub fn render_stride(&self, dt: f64) -> u64 {
        let ticks_per_wall_s = self.time_scale.unwrap_or(1.0) / dt;
        (ticks_per_wall_s / self.render_hz).round().max(1.0) as u64
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
}

enum Inbound {
    Msg(ClientMessage, Instant),
    Closed(String),
}

enum Outbound {
    Frame(Vec<u8>),
}

/// Owns the writer thread. Snapshots go through `try_send`; everything
/// else waits for queue space.
struct Outlet {
    tx: Option<SyncSender<Outbound>>,
    writer: Option<JoinHandle<()>>,
    dropped: u64,
}

impl Outlet {
    fn new(stream: TcpStream, capacity: usize) -> Self {
        let (tx, rx) = mpsc::sync_channel::<Outbound>(capacity);
        let writer = thread::spawn(move || {
            let mut w = BufWriter::new(stream);
            for Outbound::Frame(body) in rx {
                if let Err(e) = write_frame(&mut w, &body) {
                    log::warn!("console write failed: {e}");
                    return;
                }
            }
        });
        Self { tx: Some(tx), writer: Some(writer), dropped: 0 }
    }

    fn send(&mut self, msg: &ServerMessage) -> bool {
        self.tx.as_ref().is_some_and(|tx| tx.send(Outbound::Frame(encode(msg))).is_ok())
    }

    /// `false` when the message was dropped.
    fn offer(&mut self, msg: &ServerMessage) -> bool {
        let Some(tx) = &self.tx else { return false };
        match tx.try_send(Outbound::Frame(encode(msg))) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.dropped += 1;
                false
            }
        }
    }

    fn close(&mut self) {
        self.tx.take();
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
    }
}

fn spawn_reader(stream: TcpStream, outlet: SyncSender<Outbound>, capacity: usize) -> Receiver<Inbound> {
    let (tx, rx) = mpsc::sync_channel(capacity);
    thread::spawn(move || {
        let mut r = io::BufReader::new(stream);
        loop {
            let body = match read_frame(&mut r) {
                Ok(Some(b)) => b,
                Ok(None) => {
                    let _ = tx.send(Inbound::Closed("console disconnected".into()));
                    return;
                }
                Err(e) => {
                    let _ = tx.send(Inbound::Closed(format!("console stream error: {e}")));
                    return;
                }
            };
            match serde_json::from_slice::<ClientMessage>(&body) {
                Ok(ClientMessage::Hello { .. }) => {
                    let _ = outlet.send(Outbound::Frame(encode(&ServerMessage::reject(RejectReason::Unexpected, "already greeted"))));
                }
                Ok(m) => {
                    if tx.send(Inbound::Msg(m, Instant::now())).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    let _ = outlet.send(Outbound::Frame(encode(&ServerMessage::reject(RejectReason::Malformed, e.to_string()))));
                }
            }
        }
    });
    rx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Running,
    Paused,
    Sart,
}

/// The live console as a session operator.
struct ConsoleOperator {
    out: Outlet,
    inbound: Receiver<Inbound>,
    phase: Phase,
    dt: f64,
    stride: u64,
    total_ticks: u64,
    time_scale: Option<f64>,
    clock: Instant,
    paused_at: Option<Instant>,
    pending_alerts: Vec<AlertMessage>,
    gone: Option<String>,
}

impl ConsoleOperator {
    fn reject(&mut self, reason: RejectReason, detail: impl Into<String>) {
        self.out.send(&ServerMessage::reject(reason, detail));
    }

    fn pace(&self, tick: u64) {
        if let Some(scale) = self.time_scale {
            let due = self.clock + Duration::from_secs_f64(tick as f64 * self.dt / scale);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
    }

    fn next(&mut self) -> Result<(ClientMessage, Instant), OperatorGone> {
        if let Some(g) = &self.gone {
            return Err(OperatorGone(g.clone()));
        }
        match self.inbound.recv() {
            Ok(Inbound::Msg(m, at)) => Ok((m, at)),
            Ok(Inbound::Closed(why)) => {
                self.gone = Some(why.clone());
                Err(OperatorGone(why))
            }
            Err(_) => Err(OperatorGone("console reader stopped".into())),
        }
    }

    /// Handles a message that is not what the current phase waits for.
    fn stray(&mut self, m: &ClientMessage) {
        match (self.phase, m) {
            (Phase::Paused, ClientMessage::Mark { .. } | ClientMessage::Unmark { .. } | ClientMessage::Swipe { .. }) => {
                self.reject(RejectReason::Paused, m.type_name())
            }
            (Phase::Sart, ClientMessage::Mark { .. } | ClientMessage::Unmark { .. } | ClientMessage::Swipe { .. }) => {
                self.reject(RejectReason::TaskOver, m.type_name())
            }
            (_, ClientMessage::SagatAnswer { query_id, .. }) => {
                self.reject(RejectReason::OutOfOrder, format!("no pending question {query_id}"))
            }
            _ => self.reject(RejectReason::Unexpected, m.type_name()),
        }
    }
}

fn action_of(m: &ClientMessage) -> Option<ActionKind> {
    match m {
        ClientMessage::Mark { cell } => Some(ActionKind::Mark { cell: *cell }),
        ClientMessage::Unmark { cell } => Some(ActionKind::Unmark { cell: *cell }),
        ClientMessage::Swipe { origin, direction, magnitude } => {
            Some(ActionKind::Swipe { origin: *origin, direction: *direction, magnitude: *magnitude })
        }
        _ => None,
    }
}

impl Operator for ConsoleOperator {
    fn observe(&mut self, event: &SessionEvent<'_>) -> Result<(), OperatorGone> {
        match event {
            SessionEvent::Started { .. } => self.clock = Instant::now(),
            SessionEvent::Snapshot(s) => {
                self.pending_alerts.extend(s.alerts.iter().cloned());
                self.pace(s.tick);
                if s.tick % self.stride == 0 || s.tick == self.total_ticks {
                    let msg = ServerMessage::Snapshot {
                        tick: s.tick,
                        remaining_s: s.remaining_s,
                        robots: s.robots.clone(),
                        marked: s.marked.clone(),
                        alerts: self.pending_alerts.clone(),
                    };
                    if self.out.offer(&msg) {
                        self.pending_alerts.clear();
                    }
                }
            }
            SessionEvent::ActionRejected { action, reason } => {
                let detail = format!("{} at tick {}: {reason}", action.kind.name(), action.tick);
                self.reject(RejectReason::InvalidAction, detail);
            }
            SessionEvent::PauseBegin { pause, queries } => {
                self.phase = Phase::Paused;
                self.paused_at = Some(Instant::now());
                self.out.send(&ServerMessage::PauseBegin { pause: *pause, total: queries.len() });
            }
            SessionEvent::PauseEnd { pause } => {
                self.out.send(&ServerMessage::PauseEnd { pause: *pause });
                if let Some(at) = self.paused_at.take() {
                    self.clock += at.elapsed();
                }
                self.phase = Phase::Running;
            }
            SessionEvent::SartForm => {
                self.phase = Phase::Sart;
                self.out.send(&ServerMessage::SartForm { constructs: CONSTRUCTS.iter().map(|c| c.to_string()).collect(), min: 1, max: 7 });
            }
            SessionEvent::SessionEnd { report } => {
                self.out.send(&ServerMessage::SessionEnd { end: EndStatus::Complete, report: Some(Box::new((*report).clone())) });
            }
        }
        Ok(())
    }

    fn actions(&mut self, view: &OperatorView<'_>) -> Result<Vec<OperatorAction>, OperatorGone> {
        let mut out = Vec::new();
        loop {
            match self.inbound.try_recv() {
                Ok(Inbound::Msg(m, _)) => match action_of(&m) {
                    Some(kind) => out.push(OperatorAction { tick: view.tick, kind }),
                    None => self.stray(&m),
                },
                Ok(Inbound::Closed(why)) => {
                    self.gone = Some(why.clone());
                    return Err(OperatorGone(why));
                }
                Err(mpsc::TryRecvError::Empty) => return Ok(out),
                Err(mpsc::TryRecvError::Disconnected) => return Err(OperatorGone("console reader stopped".into())),
            }
        }
    }

    fn answer(&mut self, prompt: &QueryPrompt<'_>, _truth: &Truth, _all: &[CellIndex]) -> Result<SagatResponse, OperatorGone> {
        let q = prompt.query;
        let view = PromptView {
            query_id: q.id.clone(),
            level: q.level,
            kind: q.kind,
            prompt: q.prompt.clone(),
            options: q.options.as_ref().map(|o| o.labels()),
        };
        self.out.send(&ServerMessage::QueryPrompt { pause: prompt.pause, index: prompt.index, total: prompt.total, query: view });
        let asked = Instant::now();
        let n_options = q.options.as_ref().map_or(0, |o| o.labels().len());
        loop {
            let (m, at) = self.next()?;
            match m {
                ClientMessage::SagatAnswer { query_id, answer } if query_id == q.id => {
                    let in_range = match &answer {
                        hsi_core::sagat::Answer::Choice { index } => *index < n_options,
                        _ => true,
                    };
                    if !answer.fits(q.kind) || !in_range {
                        self.reject(RejectReason::InvalidAnswer, format!("answer does not fit {}", q.id));
                        continue;
                    }
                    let latency_ms = at.saturating_duration_since(asked).as_millis() as u64;
                    return Ok(SagatResponse { query_id, answer, latency_ms });
                }
                ClientMessage::SagatAnswer { query_id, .. } => {
                    self.reject(RejectReason::OutOfOrder, format!("expected {}, got {query_id}", q.id));
                }
                other => self.stray(&other),
            }
        }
    }

    fn sart(&mut self) -> Result<Option<Vec<i64>>, OperatorGone> {
        loop {
            let (m, _) = self.next()?;
            match m {
                ClientMessage::SartSubmit { ratings } => match score_sart(&ratings) {
                    Ok(_) => return Ok(Some(ratings)),
                    Err(e) => self.reject(RejectReason::InvalidRatings, e.to_string()),
                },
                other => self.stray(&other),
            }
        }
    }
}

/// Refuses every connection after the first until stopped.
fn spawn_refuser(listener: TcpListener, stop: Arc<AtomicBool>) -> io::Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    Ok(thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((mut s, peer)) => {
                    log::info!("refusing second console from {peer}");
                    let _ = s.set_nonblocking(false);
                    let _ = s.set_write_timeout(Some(Duration::from_secs(1)));
                    let _ = write_frame(&mut s, &encode(&ServerMessage::reject(RejectReason::Busy, "a console is already connected")));
                    let _ = s.shutdown(Shutdown::Both);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    thread::sleep(Duration::from_millis(20));
                }
            }
        }
    }))
}

/// Waits for a console with a valid Hello. Connections that send anything
/// else are told why and dropped.
fn accept_console(listener: &TcpListener, cfg: &GatewayConfig) -> Result<TcpStream, GatewayError> {
    loop {
        let (mut stream, peer) = listener.accept()?;
        stream.set_read_timeout(Some(Duration::from_millis(cfg.hello_timeout_ms)))?;
        stream.set_write_timeout(Some(Duration::from_millis(cfg.write_timeout_ms)))?;
        let refusal = match read_frame(&mut stream) {
            Ok(Some(body)) => match serde_json::from_slice::<ClientMessage>(&body) {
                Ok(ClientMessage::Hello { protocol, console_version }) if protocol == PROTOCOL => {
                    log::info!("console {console_version} connected from {peer}");
                    stream.set_read_timeout(None)?;
                    return Ok(stream);
                }
                Ok(ClientMessage::Hello { protocol, .. }) => {
                    ServerMessage::reject(RejectReason::UnsupportedProtocol, format!("expected {PROTOCOL}, got {protocol}"))
                }
                Ok(other) => ServerMessage::reject(RejectReason::Unexpected, format!("expected Hello, got {}", other.type_name())),
                Err(e) => ServerMessage::reject(RejectReason::Malformed, e.to_string()),
            },
            Ok(None) => continue,
            Err(e) => {
                log::warn!("handshake with {peer} failed: {e}");
                continue;
            }
        };
        let _ = write_frame(&mut stream, &encode(&refusal));
        let _ = stream.shutdown(Shutdown::Both);
    }
}

fn welcome(setup: &SessionSetup) -> ServerMessage {
    let c = &setup.config;
    ServerMessage::Welcome {
        protocol: PROTOCOL.into(),
        participant_id: c.participant_id.clone(),
        hazard_kind: c.hazard_kind,
        attempt: c.attempt,
        task_duration_s: c.task_duration_s,
        dt: setup.dt,
        world: WorldView {
            width: setup.world.width,
            height: setup.world.height,
            cell_size: setup.world.cell_size,
            obstacles: setup.world.static_obstacles.iter().copied().collect(),
            target: setup.world.target,
        },
    }
}

/// Runs one session against the first console that greets correctly on
/// `listener`. Later connections are refused with `busy`.
pub fn serve(setup: &SessionSetup, listener: TcpListener, cfg: &GatewayConfig, sink: &mut dyn LineSink) -> Result<RunOutcome, GatewayError> {
    cfg.validate()?;
    let stream = accept_console(&listener, cfg)?;
    let stop = Arc::new(AtomicBool::new(false));
    let refuser = spawn_refuser(listener, stop.clone())?;

    let mut out = Outlet::new(stream.try_clone()?, cfg.outbound_capacity);
    out.send(&welcome(setup));
    let reader_outlet = out.tx.clone().expect("fresh outlet");
    let inbound = spawn_reader(stream.try_clone()?, reader_outlet, cfg.inbound_capacity);

    let mut op = ConsoleOperator {
        out,
        inbound,
        phase: Phase::Running,
        dt: setup.dt,
        stride: cfg.render_stride(setup.dt),
        total_ticks: setup.total_ticks,
        time_scale: cfg.time_scale,
        clock: Instant::now(),
        paused_at: None,
        pending_alerts: Vec::new(),
        gone: None,
    };
    let result = run_session(setup, &mut op, sink);
    if let Ok(o) = &result {
        if let EndStatus::Aborted { .. } = o.end {
            op.out.offer(&ServerMessage::SessionEnd { end: o.end.clone(), report: None });
        }
    }
    if op.out.dropped > 0 {
        log::info!("{} snapshots dropped under backpressure", op.out.dropped);
    }
    // The reader holds a sender clone; shutting the socket ends it.
    let _ = stream.shutdown(Shutdown::Read);
    op.out.tx.take();
    drain_reader(&op.inbound);
    op.out.close();
    let _ = stream.shutdown(Shutdown::Both);
    stop.store(true, Ordering::Relaxed);
    let _ = refuser.join();
    Ok(result?)
}

fn drain_reader(rx: &Receiver<Inbound>) {
    let deadline = Instant::now() + Duration::from_secs(2);
    loop {
        match rx.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
            Ok(Inbound::Closed(_)) | Err(RecvTimeoutError::Disconnected) | Err(RecvTimeoutError::Timeout) => return,
            Ok(Inbound::Msg(..)) => {}
        }
    }
}
