//! Synthetic cohorts of scripted participants for pipeline testing.
//!
//! Each participant gets one accuracy `a`. Their operator is a noisy marker
//! that marks each alerted cell with probability `a`, and their SAGAT
//! respondent answers correctly with probability `a`. All participants see
//! the same scenario for a given (hazard, attempt), so differences between
//! them come from the operator alone.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hazard::HazardKind;
use crate::intervention::{ScriptedOperator, ScriptedPolicy};
use crate::rng::{fnv1a64, RngStream};
use crate::sagat::ScriptedRespondent;
use crate::session::{run_session, Attempt, FileSink, LineSink, ScriptedSession, SessionConfig, SessionError, SessionLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub participants: usize,
    pub seed: u64,
    pub accuracy_min: f64,
    pub accuracy_max: f64,
    pub mark_delay_ticks: u64,
    pub base: SessionConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { participants: 30, seed: 1, accuracy_min: 0.05, accuracy_max: 0.95, mark_delay_ticks: 10, base: SessionConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticipantPlan {
    pub id: String,
    pub accuracy: f64,
    /// Hazard order for A1 and for A2.
    pub orders: [[HazardKind; 3]; 2],
}

pub fn plan(cfg: &SyntheticConfig) -> Vec<ParticipantPlan> {
    let root = RngStream::named(cfg.seed, "cohort");
    (0..cfg.participants)
        .map(|i| {
            let mut rng = root.derive_u64(i as u64);
            let accuracy = rng.uniform(cfg.accuracy_min, cfg.accuracy_max);
            let mut a1 = HazardKind::STUDY;
            rng.shuffle(&mut a1);
            let mut a2 = a1;
            while a2 == a1 {
                rng.shuffle(&mut a2);
            }
            ParticipantPlan { id: format!("p{:02}", i + 1), accuracy, orders: [a1, a2] }
        })
        .collect()
}

/// The session config for one participant-task.
pub fn task_config(cfg: &SyntheticConfig, p: &ParticipantPlan, attempt: Attempt, order_index: usize) -> SessionConfig {
    let hazard = p.orders[attempt as usize][order_index];
    let scenario = fnv1a64(format!("{}:{hazard}:{attempt:?}", cfg.seed).as_bytes());
    SessionConfig {
        seed: scenario,
        hazard_kind: hazard,
        attempt,
        participant_id: p.id.clone(),
        task_order_index: (attempt as usize * 3 + order_index) as u32,
        ..cfg.base.clone()
    }
}

pub fn task_operator(cfg: &SyntheticConfig, p: &ParticipantPlan, session: &SessionConfig) -> ScriptedSession {
    let key = RngStream::named(cfg.seed, "participant").derive(&p.id).derive_u64(u64::from(session.task_order_index));
    let policy = ScriptedPolicy::NoisyMarker { accuracy: p.accuracy, delay_ticks: cfg.mark_delay_ticks };
    ScriptedSession::new(
        ScriptedOperator::new(policy, key.derive("policy")).expect("accuracy within [0, 1]"),
        ScriptedRespondent::new(p.accuracy, key.derive("respondent")),
        Some(p.accuracy),
        key.derive("sart"),
    )
}

/// Runs every participant-task. With `out_dir`, logs are also written
/// there as `<participant>_<hazard>_<attempt>.jsonl`.
pub fn generate(cfg: &SyntheticConfig, out_dir: Option<&Path>) -> Result<Vec<(String, SessionLog)>, SessionError> {
    let plans = plan(cfg);
    let tasks: Vec<(usize, Attempt, usize)> = (0..plans.len())
        .flat_map(|i| [Attempt::A1, Attempt::A2].into_iter().flat_map(move |a| (0..3).map(move |k| (i, a, k))))
        .collect();
    tasks
        .par_iter()
        .map(|&(i, attempt, k)| {
            let p = &plans[i];
            let session = task_config(cfg, p, attempt, k);
            let setup = session.prepare()?;
            let mut op = task_operator(cfg, p, &session);
            let name = format!("{}_{}_{:?}.jsonl", p.id, session.hazard_kind, attempt);
            let mut lines = Vec::new();
            run_session(&setup, &mut op, &mut lines)?;
            if let Some(dir) = out_dir {
                let mut sink = FileSink::create(&dir.join(&name))?;
                for l in &lines {
                    sink.push(l.clone())?;
                }
                sink.finish()?;
            }
            Ok((name, SessionLog::parse(&lines.join("\n"))?))
        })
        .collect()
}
