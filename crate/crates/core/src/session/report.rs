use serde::{Deserialize, Serialize};

use super::config::Attempt;
use super::log::{LogHeader, LogRecord, RecordBody};
use super::SessionError;
use crate::hazard::HazardKind;
use crate::metrics::MetricSample;
use crate::sagat::{aggregate_sagat, score_response, QuestionScore, SagatReport, ScoringConfig};
use crate::sart::{score_sart, SartScore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub ticks: u64,
    pub sim_time_s: f64,
    pub pause_ticks: Vec<u64>,
    pub answers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_answer_latency_ms: Option<f64>,
    pub actions_applied: usize,
    pub actions_rejected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub participant_id: String,
    pub hazard_kind: HazardKind,
    pub attempt: Attempt,
    pub task_order_index: u32,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_metrics: Option<MetricSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sagat: Option<SagatReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sart: Option<SartScore>,
    pub deactivated: usize,
    pub trapped: usize,
    pub timing: TimingStats,
}

/// Derives the report from logged records alone. `complete` reflects
/// whether the task ran to its last tick.
pub fn build_report(
    header: &LogHeader,
    records: &[LogRecord],
    scoring: &ScoringConfig,
    complete: bool,
) -> Result<SessionReport, SessionError> {
    let cfg = &header.config;
    let dt = cfg.swarm.dt;
    let mut final_metrics: Option<&MetricSample> = None;
    let mut questions = Vec::new();
    let mut latencies = Vec::new();
    let mut sart = None;
    let (mut applied, mut rejected) = (0, 0);
    let mut last_tick = 0;
    let mut pauses = Vec::new();
    for r in records {
        last_tick = last_tick.max(r.tick);
        match &r.body {
            RecordBody::MetricSample(m) => final_metrics = Some(m),
            RecordBody::PauseBegin { .. } => pauses.push(r.tick),
            RecordBody::Action(a) => {
                if a.applied {
                    applied += 1;
                } else {
                    rejected += 1;
                }
            }
            RecordBody::SagatAnswer(a) => {
                let query = header
                    .bank
                    .get(&a.query_id)
                    .ok_or_else(|| SessionError::Schema(format!("answer for unknown query {}", a.query_id)))?;
                let score = score_response(query, &a.answer, &a.truth, scoring).map_err(|e| SessionError::Schema(e.to_string()))?;
                questions.push(QuestionScore { query_id: a.query_id.clone(), level: a.level, dimension: a.dimension, score });
                latencies.push(a.latency_ms as f64);
            }
            RecordBody::SartSubmission { ratings } => {
                sart = Some(score_sart(ratings).map_err(|e| SessionError::Schema(e.to_string()))?);
            }
            _ => {}
        }
    }
    let answers = questions.len();
    let sagat = if questions.is_empty() { None } else { aggregate_sagat(questions).ok() };
    Ok(SessionReport {
        participant_id: cfg.participant_id.clone(),
        hazard_kind: cfg.hazard_kind,
        attempt: cfg.attempt,
        task_order_index: cfg.task_order_index,
        complete,
        final_metrics: final_metrics.cloned(),
        sagat,
        sart,
        deactivated: final_metrics.map_or(0, |m| m.deactivated_count),
        trapped: final_metrics.map_or(0, |m| m.trapped_count),
        timing: TimingStats {
            ticks: last_tick,
            sim_time_s: last_tick as f64 * dt,
            pause_ticks: pauses,
            answers,
            mean_answer_latency_ms: (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64),
            actions_applied: applied,
            actions_rejected: rejected,
        },
    })
}
