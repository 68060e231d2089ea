//! JSONL session log. Line 0 is the header; every line ends with a
//! `chain` field holding the FNV-1a hash of the previous chain value and
//! the line's own bytes up to (not including) the chain field.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::config::SessionConfig;
use super::report::SessionReport;
use super::SessionError;
use crate::hazard::{AlertMessage, HazardEvent};
use crate::intervention::OperatorAction;
use crate::metrics::MetricSample;
use crate::rng::Fnv64;
use crate::sagat::{Answer, QueryBank, SaLevel, Truth};
use crate::swarm::RobotStatus;
use crate::world::{GridWorld, Vec2};

pub const SCHEMA: &str = "hsi-session-log/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub config: SessionConfig,
    pub world: GridWorld,
    pub bank: QueryBank,
    pub pause_ticks: Vec<u64>,
    pub total_ticks: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    pub id: u32,
    pub position: Vec2,
    pub status: RobotStatus,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub trapped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub action: OperatorAction,
    pub applied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub pause: usize,
    /// 1-based position within the pause.
    pub index: usize,
    pub query_id: String,
    pub level: SaLevel,
    pub dimension: u8,
    pub answer: Answer,
    pub latency_ms: u64,
    pub truth: Truth,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EndStatus {
    Complete,
    Aborted { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum RecordBody {
    RobotSnapshot { robots: Vec<RobotView> },
    HazardEvent(HazardEvent),
    Alert(AlertMessage),
    Action(ActionRecord),
    PauseBegin { pause: usize, query_ids: Vec<String> },
    SagatAnswer(AnswerRecord),
    PauseEnd { pause: usize },
    MetricSample(MetricSample),
    SartSubmission { ratings: Vec<i64> },
    SessionEnd { end: EndStatus, report: Box<SessionReport> },
    StateHash { hash: String },
}

impl RecordBody {
    pub fn type_name(&self) -> &'static str {
        match self {
            RecordBody::RobotSnapshot { .. } => "RobotSnapshot",
            RecordBody::HazardEvent(_) => "HazardEvent",
            RecordBody::Alert(_) => "Alert",
            RecordBody::Action(_) => "Action",
            RecordBody::PauseBegin { .. } => "PauseBegin",
            RecordBody::SagatAnswer(_) => "SagatAnswer",
            RecordBody::PauseEnd { .. } => "PauseEnd",
            RecordBody::MetricSample(_) => "MetricSample",
            RecordBody::SartSubmission { .. } => "SartSubmission",
            RecordBody::SessionEnd { .. } => "SessionEnd",
            RecordBody::StateHash { .. } => "StateHash",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub tick: u64,
    #[serde(flatten)]
    pub body: RecordBody,
}

pub fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

const CHAIN_SUFFIX_LEN: usize = r#","chain":""}"#.len() + 16;

/// Appends the chain field to a serialized JSON object.
fn seal(prefix: &str, prev: u64) -> (String, u64) {
    let mut h = Fnv64::with_state(prev);
    h.write(prefix.as_bytes());
    let chain = h.finish();
    let body = prefix.strip_suffix('}').expect("serialized objects end with a brace");
    (format!("{body},\"chain\":\"{}\"}}", hash_hex(chain)), chain)
}

/// Checks one line's chain and returns the JSON without it plus the new chain.
fn unseal(line: &str, prev: u64, lineno: usize) -> Result<(String, u64), SessionError> {
    let bad = |why: &str| SessionError::Integrity { tick: None, line: Some(lineno), reason: why.into() };
    if line.len() < CHAIN_SUFFIX_LEN || !line.is_char_boundary(line.len() - CHAIN_SUFFIX_LEN) {
        return Err(bad("line too short to carry a chain field"));
    }
    let (head, tail) = line.split_at(line.len() - CHAIN_SUFFIX_LEN);
    let hex = tail
        .strip_prefix(",\"chain\":\"")
        .and_then(|t| t.strip_suffix("\"}"))
        .ok_or_else(|| bad("missing chain field"))?;
    let claimed = u64::from_str_radix(hex, 16).map_err(|_| bad("malformed chain value"))?;
    if hex_is_canonical(hex) {
        let prefix = format!("{head}}}");
        let mut h = Fnv64::with_state(prev);
        h.write(prefix.as_bytes());
        if h.finish() == claimed {
            return Ok((prefix, claimed));
        }
    }
    Err(bad("chain hash mismatch"))
}

fn hex_is_canonical(hex: &str) -> bool {
    hex.len() == 16 && hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Serializes records into sealed lines, keeping the chain state.
#[derive(Debug)]
pub struct LineEncoder {
    chain: u64,
    seq: u64,
}

impl LineEncoder {
    pub fn header(header: &LogHeader) -> (Self, String) {
        let json = serde_json::to_string(header).expect("header serializes");
        let (line, chain) = seal(&json, Fnv64::new().finish());
        (Self { chain, seq: 0 }, line)
    }

    pub fn encode(&mut self, tick: u64, body: RecordBody) -> (LogRecord, String) {
        let record = LogRecord { seq: self.seq, tick, body };
        self.seq += 1;
        let json = serde_json::to_string(&record).expect("records serialize");
        let (line, chain) = seal(&json, self.chain);
        self.chain = chain;
        (record, line)
    }
}

/// Where sealed lines go.
pub trait LineSink {
    fn push(&mut self, line: String) -> Result<(), SessionError>;
    fn finish(&mut self) -> Result<(), SessionError> {
        Ok(())
    }
}

impl LineSink for Vec<String> {
    fn push(&mut self, line: String) -> Result<(), SessionError> {
        Vec::push(self, line);
        Ok(())
    }
}

/// Writes lines to a file on a dedicated thread behind a bounded queue.
pub struct FileSink {
    tx: Option<SyncSender<String>>,
    worker: Option<JoinHandle<std::io::Result<()>>>,
}

impl FileSink {
    pub fn create(path: &Path) -> Result<Self, SessionError> {
        let file = File::create(path)?;
        let (tx, rx) = sync_channel::<String>(4096);
        let worker = std::thread::spawn(move || {
            let mut w = BufWriter::new(file);
            for line in rx {
                w.write_all(line.as_bytes())?;
                w.write_all(b"\n")?;
            }
            w.flush()
        });
        Ok(Self { tx: Some(tx), worker: Some(worker) })
    }
}

impl LineSink for FileSink {
    fn push(&mut self, line: String) -> Result<(), SessionError> {
        let tx = self.tx.as_ref().ok_or_else(|| SessionError::Io("log already closed".into()))?;
        tx.send(line).map_err(|_| SessionError::Io("log writer stopped".into()))
    }

    fn finish(&mut self) -> Result<(), SessionError> {
        self.tx.take();
        match self.worker.take() {
            Some(h) => h.join().map_err(|_| SessionError::Io("log writer panicked".into()))?.map_err(Into::into),
            None => Ok(()),
        }
    }
}

impl Drop for FileSink {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

/// A parsed and chain-verified log.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl SessionLog {
    pub fn parse(text: &str) -> Result<Self, SessionError> {
        Self::parse_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    pub fn read(path: &Path) -> Result<Self, SessionError> {
        let file = File::open(path)?;
        Self::from_reader(file)
    }

    pub fn from_reader(r: impl Read) -> Result<Self, SessionError> {
        Self::parse_lines(BufReader::new(r).lines().map(|l| l.map_err(SessionError::from)))
    }

    fn parse_lines(lines: impl Iterator<Item = Result<String, SessionError>>) -> Result<Self, SessionError> {
        let mut chain = Fnv64::new().finish();
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let (json, next) = unseal(&line, chain, i + 1)?;
            chain = next;
            let schema = |e: serde_json::Error| SessionError::Schema(format!("line {}: {e}", i + 1));
            if i == 0 {
                let h: LogHeader = serde_json::from_str(&json).map_err(schema)?;
                if h.schema != SCHEMA {
                    return Err(SessionError::Schema(format!("unsupported log schema {:?}", h.schema)));
                }
                header = Some(h);
            } else {
                let rec: LogRecord = serde_json::from_str(&json).map_err(schema)?;
                if rec.seq != records.len() as u64 {
                    return Err(SessionError::Integrity { tick: Some(rec.tick), line: Some(i + 1), reason: "sequence gap".into() });
                }
                if records.last().is_some_and(|p: &LogRecord| p.tick > rec.tick) {
                    return Err(SessionError::Integrity { tick: Some(rec.tick), line: Some(i + 1), reason: "tick went backwards".into() });
                }
                records.push(rec);
            }
        }
        let header = header.ok_or_else(|| SessionError::Schema("empty log".into()))?;
        Ok(Self { header, records })
    }

    pub fn end(&self) -> Option<(&EndStatus, &SessionReport)> {
        self.records.iter().rev().find_map(|r| match &r.body {
            RecordBody::SessionEnd { end, report } => Some((end, report.as_ref())),
            _ => None,
        })
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.end(), Some((EndStatus::Complete, _)))
    }

    pub fn count(&self, type_name: &str) -> usize {
        self.records.iter().filter(|r| r.body.type_name() == type_name).count()
    }
}
