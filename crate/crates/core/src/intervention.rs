//! Operator actions and scripted synthetic operators.
//!
//! The operator can only touch two things: the set of marked cells (treated
//! as obstacles by the swarm from the next tick) and one-tick velocity
//! impulses from swipes. Hazard ground truth, personal bests and the target
//! are out of reach.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hazard::AlertMessage;
use crate::rng::RngStream;
use crate::swarm::{RobotState, RobotStatus};
use crate::world::{CellIndex, GridWorld, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterventionError {
    #[error("cell {0} is a static obstacle and cannot be marked")]
    StaticObstacle(CellIndex),
    #[error("cell {0} is outside the grid")]
    InvalidCell(CellIndex),
    #[error("swipe direction must have unit norm (got {0})")]
    DirectionNotUnit(f64),
    #[error("swipe magnitude must be in [0, 1] (got {0})")]
    MagnitudeOutOfRange(f64),
    #[error("swipe origin is not finite")]
    BadOrigin,
    #[error("not a mark/unmark action")]
    NotAMark,
    #[error("invalid policy parameter: {0}")]
    InvalidPolicy(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ActionKind {
    Mark { cell: CellIndex },
    Unmark { cell: CellIndex },
    Swipe { origin: Vec2, direction: Vec2, magnitude: f64 },
}

impl ActionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActionKind::Mark { .. } => "Mark",
            ActionKind::Unmark { .. } => "Unmark",
            ActionKind::Swipe { .. } => "Swipe",
        }
    }

    /// Mark/Unmark sort before Swipe within a tick.
    pub fn priority(&self) -> u8 {
        match self {
            ActionKind::Mark { .. } | ActionKind::Unmark { .. } => 0,
            ActionKind::Swipe { .. } => 1,
        }
    }

    pub fn validate(&self, world: &GridWorld) -> Result<(), InterventionError> {
        match self {
            ActionKind::Mark { cell } | ActionKind::Unmark { cell } => {
                if world.is_valid(*cell) {
                    Ok(())
                } else {
                    Err(InterventionError::InvalidCell(*cell))
                }
            }
            ActionKind::Swipe { origin, direction, magnitude } => {
                if !(origin.x.is_finite() && origin.y.is_finite()) {
                    return Err(InterventionError::BadOrigin);
                }
                let n = direction.norm();
                if !((n - 1.0).abs() <= 1e-6) {
                    return Err(InterventionError::DirectionNotUnit(n));
                }
                if !(0.0..=1.0).contains(magnitude) {
                    return Err(InterventionError::MagnitudeOutOfRange(*magnitude));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorAction {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: ActionKind,
}

/// Stable sort: arrival order, with Mark/Unmark ahead of Swipe.
pub fn order_actions(actions: &mut [OperatorAction]) {
    actions.sort_by_key(|a| a.kind.priority());
}

/// Operator-drawn avoidance cells.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedSet {
    pub cells: BTreeSet<CellIndex>,
}

impl MarkedSet {
    /// Applies a Mark or Unmark. Both are idempotent; returns whether the set changed.
    pub fn apply(&mut self, kind: &ActionKind, world: &GridWorld) -> Result<bool, InterventionError> {
        kind.validate(world)?;
        match kind {
            ActionKind::Mark { cell } => {
                if world.static_obstacles.contains(cell) {
                    return Err(InterventionError::StaticObstacle(*cell));
                }
                Ok(self.cells.insert(*cell))
            }
            ActionKind::Unmark { cell } => Ok(self.cells.remove(cell)),
            ActionKind::Swipe { .. } => Err(InterventionError::NotAMark),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwipeParams {
    /// m
    pub radius: f64,
    /// m/s for a full-magnitude swipe at the origin.
    pub k_impulse: f64,
}

/// Linear-falloff impulses for Active robots within `radius` of the origin:
/// `k · magnitude · direction · (1 − dist/radius)`.
pub fn swipe_impulses(
    origin: Vec2,
    direction: Vec2,
    magnitude: f64,
    robots: &[RobotState],
    params: &SwipeParams,
) -> BTreeMap<u32, Vec2> {
    robots
        .iter()
        .filter(|r| r.status == RobotStatus::Active)
        .filter_map(|r| {
            let dist = r.position.distance(origin);
            (dist <= params.radius).then(|| {
                let falloff = 1.0 - dist / params.radius;
                (r.id, direction * (params.k_impulse * magnitude * falloff))
            })
        })
        .collect()
}

/// What a scripted operator may look at: no hazard cells beyond alerts.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorView<'a> {
    pub tick: u64,
    pub robots: &'a [RobotState],
    pub marked: &'a BTreeSet<CellIndex>,
    /// Alerts delivered since the previous view.
    pub alerts: &'a [AlertMessage],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum ScriptedPolicy {
    Passive,
    OracleMarker,
    NoisyMarker { accuracy: f64, delay_ticks: u64 },
    RandomSwiper { interval_ticks: u64 },
}

impl ScriptedPolicy {
    pub fn validate(&self) -> Result<(), InterventionError> {
        match self {
            ScriptedPolicy::NoisyMarker { accuracy, .. } if !(0.0..=1.0).contains(accuracy) => {
                Err(InterventionError::InvalidPolicy(format!("accuracy {accuracy} outside [0, 1]")))
            }
            ScriptedPolicy::RandomSwiper { interval_ticks: 0 } => {
                Err(InterventionError::InvalidPolicy("swipe interval must be at least one tick".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScriptedPolicy::Passive => "passive",
            ScriptedPolicy::OracleMarker => "oracle-marker",
            ScriptedPolicy::NoisyMarker { .. } => "noisy-marker",
            ScriptedPolicy::RandomSwiper { .. } => "random-swiper",
        }
    }
}

/// A scripted policy plus the state it needs (delayed marks).
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedOperator {
    pub policy: ScriptedPolicy,
    rng: RngStream,
    pending: BTreeMap<u64, Vec<CellIndex>>,
}

impl ScriptedOperator {
    pub fn new(policy: ScriptedPolicy, rng: RngStream) -> Result<Self, InterventionError> {
        policy.validate()?;
        Ok(Self { policy, rng, pending: BTreeMap::new() })
    }

    pub fn act(&mut self, view: &OperatorView<'_>) -> Vec<OperatorAction> {
        let tick = view.tick;
        match &self.policy {
            ScriptedPolicy::Passive => Vec::new(),
            ScriptedPolicy::OracleMarker => view
                .alerts
                .iter()
                .flat_map(|a| a.affected_cells.iter())
                .filter(|c| !view.marked.contains(c))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(|&cell| OperatorAction { tick, kind: ActionKind::Mark { cell } })
                .collect(),
            ScriptedPolicy::NoisyMarker { accuracy, delay_ticks } => {
                let (accuracy, delay) = (*accuracy, *delay_ticks);
                let mut rng = self.rng.derive_u64(tick);
                for alert in view.alerts {
                    for cell in &alert.affected_cells {
                        if rng.bernoulli(accuracy) {
                            self.pending.entry(tick + delay).or_default().push(*cell);
                        }
                    }
                }
                let due: Vec<u64> = self.pending.range(..=tick).map(|(t, _)| *t).collect();
                let mut cells = BTreeSet::new();
                for t in due {
                    cells.extend(self.pending.remove(&t).unwrap_or_default());
                }
                cells
                    .into_iter()
                    .filter(|c| !view.marked.contains(c))
                    .map(|cell| OperatorAction { tick, kind: ActionKind::Mark { cell } })
                    .collect()
            }
            ScriptedPolicy::RandomSwiper { interval_ticks } => {
                if tick == 0 || tick % interval_ticks != 0 {
                    return Vec::new();
                }
                let active: Vec<&RobotState> = view.robots.iter().filter(|r| r.is_active()).collect();
                let mut rng = self.rng.derive_u64(tick);
                let Some(anchor) = rng.choose(&active) else { return Vec::new() };
                let angle = rng.uniform(0.0, std::f64::consts::TAU);
                let magnitude = rng.uniform(0.5, 1.0);
                vec![OperatorAction {
                    tick,
                    kind: ActionKind::Swipe {
                        origin: anchor.position,
                        direction: Vec2::new(angle.cos(), angle.sin()),
                        magnitude,
                    },
                }]
            }
        }
    }
}
