use super::log::{RecordBody, SessionLog};
use super::report::{build_report, SessionReport};
use super::runtime::{header_of, run_session, LoggedOperator};
use super::SessionError;
use crate::sagat::ScoringConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome {
    pub final_hash: u64,
    pub hashes_checked: usize,
    /// The log recorded a completed task.
    pub complete: bool,
}

/// Re-simulates a log from its header and logged operator input. Every
/// StateHash must match; every other record must come out identical.
pub fn replay(log: &SessionLog) -> Result<ReplayOutcome, SessionError> {
    let setup = log.header.config.prepare()?;
    if header_of(&setup) != log.header {
        return Err(SessionError::Integrity { tick: Some(0), line: Some(1), reason: "header does not match its config".into() });
    }
    let mut op = LoggedOperator::from_log(log);
    let mut lines = Vec::new();
    let rerun = run_session(&setup, &mut op, &mut lines)?;

    let mut hashes = 0;
    for orig in &log.records {
        if let RecordBody::StateHash { hash } = &orig.body {
            let again = rerun.records.iter().find_map(|r| match &r.body {
                RecordBody::StateHash { hash: h } if r.tick == orig.tick => Some(h),
                _ => None,
            });
            if again != Some(hash) {
                return Err(SessionError::Integrity {
                    tick: Some(orig.tick),
                    line: Some(orig.seq as usize + 2),
                    reason: "state hash diverges".into(),
                });
            }
            hashes += 1;
        }
    }
    let truncated = log.end().is_none();
    for (i, orig) in log.records.iter().enumerate() {
        let same = rerun.records.get(i) == Some(orig);
        if !same {
            return Err(SessionError::Integrity {
                tick: Some(orig.tick),
                line: Some(i + 2),
                reason: format!("{} record differs on replay", orig.body.type_name()),
            });
        }
    }
    if !truncated && rerun.records.len() != log.records.len() {
        return Err(SessionError::Integrity { tick: None, line: None, reason: "replay produced a different record count".into() });
    }
    Ok(ReplayOutcome { final_hash: rerun.final_hash, hashes_checked: hashes, complete: log.is_complete() })
}

/// Recomputes the report from logged records under another rubric.
pub fn rescore(log: &SessionLog, scoring: &ScoringConfig) -> Result<SessionReport, SessionError> {
    build_report(&log.header, &log.records, scoring, log.is_complete())
}
