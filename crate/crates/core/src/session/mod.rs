//! Session lifecycle: config, tick loop with SAGAT pauses, event log,
//! replay and rescoring.

mod config;
mod log;
mod replay;
mod report;
mod runtime;

use thiserror::Error;

pub use config::{Attempt, InterventionConfig, LogConfig, SessionConfig, SessionSetup};
pub use log::{
    hash_hex, ActionRecord, AnswerRecord, EndStatus, FileSink, LineSink, LogHeader, LogRecord, RecordBody, RobotView,
    SessionLog, SCHEMA,
};
pub use replay::{replay, rescore, ReplayOutcome};
pub use report::{build_report, SessionReport, TimingStats};
pub use runtime::{
    header_of, run_session, scripted_sart, LoggedOperator, Operator, OperatorGone, QueryPrompt, RunOutcome,
    ScriptedSession, SessionEvent, Snapshot,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("log schema error: {0}")]
    Schema(String),
    #[error("integrity error at {}: {reason}", where_(.tick, .line))]
    Integrity { tick: Option<u64>, line: Option<usize>, reason: String },
}

fn where_(tick: &Option<u64>, line: &Option<usize>) -> String {
    match (tick, line) {
        (Some(t), Some(l)) => format!("tick {t} (line {l})"),
        (Some(t), None) => format!("tick {t}"),
        (None, Some(l)) => format!("line {l}"),
        (None, None) => "unknown position".into(),
    }
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        SessionError::Io(e.to_string())
    }
}
