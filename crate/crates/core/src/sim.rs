//! The full deterministic simulation state and its tick function.
//!
//! Per tick: drain actions (marks, then swipes) → step hazards → step
//! robots with the summed swipe impulses → deactivate robots standing on
//! hazard cells. A `Simulation` is a plain value, so cloning it forks it.

use std::collections::{BTreeMap, BTreeSet};

use crate::hazard::{HazardField, HazardStep};
use crate::intervention::{order_actions, swipe_impulses, ActionKind, MarkedSet, OperatorAction, SwipeParams};
use crate::metrics::{compute_metrics, MetricSample, NaqMode, TpValues, tp_values};
use crate::rng::Fnv64;
use crate::swarm::{apply_hazards, RobotStatus, Swarm};
use crate::world::{GridWorld, RegionMap, Vec2};

#[derive(Clone, Debug)]
pub struct Simulation {
    pub world: GridWorld,
    pub regions: RegionMap,
    pub swarm: Swarm,
    pub hazard: HazardField,
    pub marked: MarkedSet,
    pub swipe: SwipeParams,
    pub naq_mode: NaqMode,
    /// Last completed tick.
    pub tick: u64,
}

/// What happened to one submitted action.
#[derive(Clone, Debug, PartialEq)]
pub struct AppliedAction {
    pub action: OperatorAction,
    /// `Err` carries the rejection reason.
    pub outcome: Result<(), String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickOutcome {
    pub tick: u64,
    pub actions: Vec<AppliedAction>,
    pub hazard: HazardStep,
    pub deactivated: Vec<u32>,
}

impl Simulation {
    /// Builds the simulation and runs tick 0 (hazard initialization and a
    /// first deactivation check).
    pub fn start(
        world: GridWorld,
        regions: RegionMap,
        swarm: Swarm,
        hazard: HazardField,
        swipe: SwipeParams,
        naq_mode: NaqMode,
    ) -> (Self, TickOutcome) {
        let mut sim = Self { world, regions, swarm, hazard, marked: MarkedSet::default(), swipe, naq_mode, tick: 0 };
        let hazard = sim.hazard.step(0, &sim.world);
        let deactivated = apply_hazards(&mut sim.swarm.robots, sim.hazard.active_cells(), &sim.world);
        (sim, TickOutcome { tick: 0, actions: Vec::new(), hazard, deactivated })
    }

    /// Advances one tick, consuming the actions queued for it.
    pub fn step(&mut self, mut actions: Vec<OperatorAction>) -> TickOutcome {
        let tick = self.tick + 1;
        order_actions(&mut actions);
        let mut impulses: BTreeMap<u32, Vec2> = BTreeMap::new();
        let mut applied = Vec::with_capacity(actions.len());
        for action in actions {
            let outcome = match &action.kind {
                ActionKind::Mark { .. } | ActionKind::Unmark { .. } => {
                    self.marked.apply(&action.kind, &self.world).map(|_| ()).map_err(|e| e.to_string())
                }
                ActionKind::Swipe { origin, direction, magnitude } => {
                    action.kind.validate(&self.world).map_err(|e| e.to_string()).map(|()| {
                        for (id, dv) in swipe_impulses(*origin, *direction, *magnitude, &self.swarm.robots, &self.swipe) {
                            *impulses.entry(id).or_insert(Vec2::ZERO) += dv;
                        }
                    })
                }
            };
            applied.push(AppliedAction { action, outcome });
        }
        let hazard = self.hazard.step(tick, &self.world);
        self.swarm.step(tick, &self.world, &self.marked.cells, &impulses);
        let deactivated = apply_hazards(&mut self.swarm.robots, self.hazard.active_cells(), &self.world);
        self.tick = tick;
        TickOutcome { tick, actions: applied, hazard, deactivated }
    }

    pub fn tp(&self) -> Option<TpValues> {
        let active: Vec<Vec2> = self.swarm.robots.iter().filter(|r| r.is_active()).map(|r| r.position).collect();
        tp_values(&active, self.world.target, self.naq_mode)
    }

    pub fn metrics(&self) -> MetricSample {
        let p = &self.swarm.params;
        compute_metrics(&self.swarm.robots, &self.world, self.tick, self.naq_mode, (p.trapped_window_ticks, p.trapped_epsilon))
    }

    /// Rolling hash over robot states, hazard cells and marked cells.
    pub fn state_hash(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.tick);
        for r in &self.swarm.robots {
            h.write_u64(u64::from(r.id));
            for v in [r.position.x, r.position.y, r.velocity.x, r.velocity.y, r.pbest_pos.x, r.pbest_pos.y, r.pbest_fitness] {
                h.write_f64(v);
            }
            h.write(&[u8::from(r.status == RobotStatus::Active)]);
        }
        for set in [self.hazard.active_cells(), &self.marked.cells] {
            h.write_u64(set.len() as u64);
            for c in set {
                h.write_u64((u64::from(c.col) << 32) | u64::from(c.row));
            }
        }
        h.finish()
    }

    /// Ids of robots currently deactivated.
    pub fn deactivated_ids(&self) -> BTreeSet<u32> {
        self.swarm.robots.iter().filter(|r| !r.is_active()).map(|r| r.id).collect()
    }
}
