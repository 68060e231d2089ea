use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::SessionSetup;
use super::log::{
    hash_hex, ActionRecord, AnswerRecord, EndStatus, LineEncoder, LineSink, LogHeader, LogRecord, RecordBody, RobotView,
    SessionLog, SCHEMA,
};
use super::report::{build_report, SessionReport};
use super::SessionError;
use crate::hazard::AlertMessage;
use crate::intervention::{OperatorAction, OperatorView, ScriptedOperator};
use crate::rng::RngStream;
use crate::sagat::{ExtractContext, SagatQuery, SagatResponse, ScriptedRespondent, Truth, extract_truths};
use crate::sart::score_sart;
use crate::sim::Simulation;
use crate::world::CellIndex;

/// The operator left (socket closed, script ran out); the session aborts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperatorGone(pub String);

/// Operator-visible world state after a tick. Carries no hazard cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub remaining_s: f64,
    pub robots: Vec<RobotView>,
    pub marked: Vec<CellIndex>,
    /// Alerts delivered on this tick.
    pub alerts: Vec<AlertMessage>,
}

#[derive(Clone, Copy, Debug)]
pub struct QueryPrompt<'a> {
    pub pause: usize,
    /// 1-based.
    pub index: usize,
    pub total: usize,
    pub query: &'a SagatQuery,
}

#[derive(Clone, Copy, Debug)]
pub enum SessionEvent<'a> {
    Started { header: &'a LogHeader },
    Snapshot(&'a Snapshot),
    ActionRejected { action: &'a OperatorAction, reason: &'a str },
    PauseBegin { pause: usize, queries: &'a [&'a SagatQuery] },
    PauseEnd { pause: usize },
    SartForm,
    SessionEnd { report: &'a SessionReport },
}

/// Anything that can drive a session: scripts, log replays, a live console.
pub trait Operator {
    fn observe(&mut self, _event: &SessionEvent<'_>) -> Result<(), OperatorGone> {
        Ok(())
    }
    /// Actions to drain at the start of `view.tick`.
    fn actions(&mut self, view: &OperatorView<'_>) -> Result<Vec<OperatorAction>, OperatorGone>;
    /// `truth` is for scripted respondents only; live operators ignore it.
    fn answer(&mut self, prompt: &QueryPrompt<'_>, truth: &Truth, all_cells: &[CellIndex]) -> Result<SagatResponse, OperatorGone>;
    /// Ten ratings, or `None` if the operator skipped the form.
    fn sart(&mut self) -> Result<Option<Vec<i64>>, OperatorGone>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub end: EndStatus,
    pub report: SessionReport,
    pub final_hash: u64,
    pub records: Vec<LogRecord>,
}

struct Recorder<'s> {
    enc: LineEncoder,
    sink: &'s mut dyn LineSink,
    records: Vec<LogRecord>,
}

impl Recorder<'_> {
    fn push(&mut self, tick: u64, body: RecordBody) -> Result<(), SessionError> {
        let (rec, line) = self.enc.encode(tick, body);
        self.sink.push(line)?;
        self.records.push(rec);
        Ok(())
    }
}

fn robot_views(sim: &Simulation) -> Vec<RobotView> {
    let trapped = sim.swarm.trapped();
    sim.swarm
        .robots
        .iter()
        .map(|r| RobotView { id: r.id, position: r.position, status: r.status, trapped: trapped.contains(&r.id) })
        .collect()
}

pub fn header_of(setup: &SessionSetup) -> LogHeader {
    LogHeader {
        schema: SCHEMA.to_string(),
        config: setup.config.clone(),
        world: setup.world.clone(),
        bank: setup.bank.clone(),
        pause_ticks: setup.pause_ticks.clone(),
        total_ticks: setup.total_ticks,
    }
}

/// Runs one session to completion or abort, streaming sealed log lines to
/// `sink`.
pub fn run_session(setup: &SessionSetup, operator: &mut dyn Operator, sink: &mut dyn LineSink) -> Result<RunOutcome, SessionError> {
    let header = header_of(setup);
    let (enc, line) = LineEncoder::header(&header);
    sink.push(line)?;
    let mut rec = Recorder { enc, sink, records: Vec::new() };
    let (mut sim, first) = setup.start()?;
    let cfg = &setup.config;
    let total = setup.total_ticks;
    let all_cells: Vec<CellIndex> = sim.world.all_cells().collect();
    let ctx = ExtractContext { dt: setup.dt, task_ticks: total };

    let result = (|| -> Result<Result<(), OperatorGone>, SessionError> {
        if let Err(gone) = operator.observe(&SessionEvent::Started { header: &header }) {
            return Ok(Err(gone));
        }
        let mut outcome = first;
        loop {
            let t = sim.tick;
            for action in &outcome.actions {
                let (applied, reason) = match &action.outcome {
                    Ok(()) => (true, None),
                    Err(r) => (false, Some(r.clone())),
                };
                if let Some(r) = &reason {
                    if let Err(gone) = operator.observe(&SessionEvent::ActionRejected { action: &action.action, reason: r }) {
                        return Ok(Err(gone));
                    }
                }
                rec.push(t, RecordBody::Action(ActionRecord { action: action.action.clone(), applied, reason }))?;
            }
            for ev in &outcome.hazard.events {
                rec.push(t, RecordBody::HazardEvent(ev.clone()))?;
            }
            for alert in &outcome.hazard.alerts {
                rec.push(t, RecordBody::Alert(alert.clone()))?;
            }
            let last = t == total;
            let robots = robot_views(&sim);
            if t % cfg.log.snapshot_every == 0 || last || !outcome.deactivated.is_empty() {
                rec.push(t, RecordBody::RobotSnapshot { robots: robots.clone() })?;
            }
            if t % cfg.metrics.sample_every == 0 || last {
                rec.push(t, RecordBody::MetricSample(sim.metrics()))?;
            }
            if t % cfg.log.state_hash_every == 0 || last {
                rec.push(t, RecordBody::StateHash { hash: hash_hex(sim.state_hash()) })?;
            }
            let snapshot = Snapshot {
                tick: t,
                remaining_s: (total - t) as f64 * setup.dt,
                robots,
                marked: sim.marked.cells.iter().copied().collect(),
                alerts: outcome.hazard.alerts.clone(),
            };
            if let Err(gone) = operator.observe(&SessionEvent::Snapshot(&snapshot)) {
                return Ok(Err(gone));
            }
            if let Some(k) = setup.pause_ticks.iter().position(|&p| p == t) {
                if let Err(gone) = run_pause(setup, &sim, k + 1, operator, &mut rec, &all_cells, ctx)? {
                    return Ok(Err(gone));
                }
            }
            if last {
                break;
            }
            let view = OperatorView {
                tick: t + 1,
                robots: &sim.swarm.robots,
                marked: &sim.marked.cells,
                alerts: &outcome.hazard.alerts,
            };
            let mut actions = match operator.actions(&view) {
                Ok(a) => a,
                Err(gone) => return Ok(Err(gone)),
            };
            for a in &mut actions {
                a.tick = t + 1;
            }
            outcome = sim.step(actions);
        }
        if let Err(gone) = operator.observe(&SessionEvent::SartForm) {
            return Ok(Err(gone));
        }
        match operator.sart() {
            Ok(Some(ratings)) => {
                if score_sart(&ratings).is_ok() {
                    rec.push(sim.tick, RecordBody::SartSubmission { ratings })?;
                }
            }
            Ok(None) => {}
            Err(gone) => return Ok(Err(gone)),
        }
        Ok(Ok(()))
    })()?;

    let end = match result {
        Ok(()) => EndStatus::Complete,
        Err(OperatorGone(reason)) => EndStatus::Aborted { reason },
    };
    let report = build_report(&header, &rec.records, &cfg.scoring, end == EndStatus::Complete)?;
    rec.push(sim.tick, RecordBody::SessionEnd { end: end.clone(), report: Box::new(report.clone()) })?;
    if end == EndStatus::Complete {
        let _ = operator.observe(&SessionEvent::SessionEnd { report: &report });
    }
    rec.sink.finish()?;
    Ok(RunOutcome { end, report, final_hash: sim.state_hash(), records: rec.records })
}

fn run_pause(
    setup: &SessionSetup,
    sim: &Simulation,
    pause: usize,
    operator: &mut dyn Operator,
    rec: &mut Recorder<'_>,
    all_cells: &[CellIndex],
    ctx: ExtractContext,
) -> Result<Result<(), OperatorGone>, SessionError> {
    let t = sim.tick;
    let queries = setup.bank.for_pause(pause);
    rec.push(t, RecordBody::PauseBegin { pause, query_ids: queries.iter().map(|q| q.id.clone()).collect() })?;
    if let Err(g) = operator.observe(&SessionEvent::PauseBegin { pause, queries: &queries }) {
        return Ok(Err(g));
    }
    let truths = extract_truths(&setup.bank, &queries, sim, ctx);
    for (i, (q, truth)) in queries.iter().zip(truths).enumerate() {
        let prompt = QueryPrompt { pause, index: i + 1, total: queries.len(), query: q };
        let resp = match operator.answer(&prompt, &truth, all_cells) {
            Ok(r) => r,
            Err(g) => return Ok(Err(g)),
        };
        if !resp.answer.fits(q.kind) {
            return Ok(Err(OperatorGone(format!("answer to {} has the wrong type", q.id))));
        }
        rec.push(
            t,
            RecordBody::SagatAnswer(AnswerRecord {
                pause,
                index: i + 1,
                query_id: q.id.clone(),
                level: q.level,
                dimension: q.dimension,
                answer: resp.answer,
                latency_ms: resp.latency_ms,
                truth,
            }),
        )?;
    }
    rec.push(t, RecordBody::PauseEnd { pause })?;
    if let Err(g) = operator.observe(&SessionEvent::PauseEnd { pause }) {
        return Ok(Err(g));
    }
    Ok(Ok(()))
}

/// SART ratings drawn around a self-assessed level in [0, 1]: supply and
/// understanding items rise with it, demand items fall.
pub fn scripted_sart(level: f64, rng: &mut RngStream) -> Vec<i64> {
    (0..10)
        .map(|i| {
            let centre = 1.0 + 6.0 * level.clamp(0.0, 1.0);
            let centre = if i < 3 { 8.0 - centre } else { centre };
            (centre + 0.8 * rng.normal()).round().clamp(1.0, 7.0) as i64
        })
        .collect()
}

/// Scripted policy plus scripted respondent.
pub struct ScriptedSession {
    pub policy: ScriptedOperator,
    pub respondent: ScriptedRespondent,
    pub sart_level: Option<f64>,
    sart_rng: RngStream,
}

impl ScriptedSession {
    pub fn new(policy: ScriptedOperator, respondent: ScriptedRespondent, sart_level: Option<f64>, sart_rng: RngStream) -> Self {
        Self { policy, respondent, sart_level, sart_rng }
    }
}

impl Operator for ScriptedSession {
    fn actions(&mut self, view: &OperatorView<'_>) -> Result<Vec<OperatorAction>, OperatorGone> {
        Ok(self.policy.act(view))
    }

    fn answer(&mut self, prompt: &QueryPrompt<'_>, truth: &Truth, all_cells: &[CellIndex]) -> Result<SagatResponse, OperatorGone> {
        let mut r = self.respondent.answer(prompt.pause, prompt.index, truth, all_cells);
        r.query_id = prompt.query.id.clone();
        Ok(r)
    }

    fn sart(&mut self) -> Result<Option<Vec<i64>>, OperatorGone> {
        Ok(self.sart_level.map(|l| scripted_sart(l, &mut self.sart_rng)))
    }
}

/// Feeds a logged session's operator input back in.
pub struct LoggedOperator {
    actions: BTreeMap<u64, Vec<OperatorAction>>,
    answers: BTreeMap<(usize, usize), SagatResponse>,
    sart: Option<Vec<i64>>,
    abort: Option<String>,
    end_tick: u64,
}

impl LoggedOperator {
    pub fn from_log(log: &SessionLog) -> Self {
        let mut actions: BTreeMap<u64, Vec<OperatorAction>> = BTreeMap::new();
        let mut answers = BTreeMap::new();
        let mut sart = None;
        let mut abort = None;
        let mut end_tick = log.records.last().map_or(0, |r| r.tick);
        for r in &log.records {
            match &r.body {
                RecordBody::Action(a) => actions.entry(r.tick).or_default().push(a.action.clone()),
                RecordBody::SagatAnswer(a) => {
                    answers.insert(
                        (a.pause, a.index),
                        SagatResponse { query_id: a.query_id.clone(), answer: a.answer.clone(), latency_ms: a.latency_ms },
                    );
                }
                RecordBody::SartSubmission { ratings } => sart = Some(ratings.clone()),
                RecordBody::SessionEnd { end, .. } => {
                    end_tick = r.tick;
                    if let EndStatus::Aborted { reason } = end {
                        abort = Some(reason.clone());
                    }
                }
                _ => {}
            }
        }
        if log.end().is_none() {
            abort = Some("log ends without a SessionEnd record".into());
        }
        Self { actions, answers, sart, abort, end_tick }
    }

    fn gone(&self) -> OperatorGone {
        OperatorGone(self.abort.clone().unwrap_or_else(|| "logged input exhausted".into()))
    }
}

impl Operator for LoggedOperator {
    fn actions(&mut self, view: &OperatorView<'_>) -> Result<Vec<OperatorAction>, OperatorGone> {
        if self.abort.is_some() && view.tick > self.end_tick {
            return Err(self.gone());
        }
        Ok(self.actions.remove(&view.tick).unwrap_or_default())
    }

    fn answer(&mut self, prompt: &QueryPrompt<'_>, _truth: &Truth, _all: &[CellIndex]) -> Result<SagatResponse, OperatorGone> {
        self.answers.remove(&(prompt.pause, prompt.index)).ok_or_else(|| self.gone())
    }

    fn sart(&mut self) -> Result<Option<Vec<i64>>, OperatorGone> {
        match (self.sart.take(), &self.abort) {
            (Some(r), _) => Ok(Some(r)),
            (None, Some(_)) => Err(self.gone()),
            (None, None) => Ok(None),
        }
    }
}
