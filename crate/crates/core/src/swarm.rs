//! PSO LBEST swarm with a metric communication neighborhood.
//!
//! Velocity update per robot and tick:
//!
//! ```text
//! v' = w·v + c1·r1·(pbest − x) + c2·r2·(lbest − x) + Σ impulses
//! v' = clamp(v', vmax)
//! x' = avoid(x + v'·dt)
//! ```
//!
//! `lbest` is the best personal best among Active robots within
//! `comm_range` of the robot (itself included). Fitness is the received
//! intensity of a constant source at the target, `P / max(d, d_min)²`.
//!
//! The PSO velocity update runs once per control period (default 1 s, i.e.
//! every 10 ticks at `dt = 0.1`); on the ticks in between robots coast on
//! their current velocity. Motion, avoidance and sensing happen every tick.
//! With a period of one tick this is the plain per-tick update.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::world::{CellIndex, GridWorld, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobotStatus {
    Active,
    Deactivated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub position: Vec2,
    pub blocked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub pbest_pos: Vec2,
    pub pbest_fitness: f64,
    pub status: RobotStatus,
    /// Recent post-step positions with their avoidance outcome, oldest first.
    pub window: VecDeque<WindowEntry>,
}

impl RobotState {
    pub fn new(id: u32, position: Vec2, fitness: f64) -> Self {
        Self {
            id,
            position,
            velocity: Vec2::ZERO,
            pbest_pos: position,
            pbest_fitness: fitness,
            status: RobotStatus::Active,
            window: VecDeque::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == RobotStatus::Active
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsoParams {
    pub n_robots: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// m/s
    pub vmax: f64,
    /// m
    pub comm_range: f64,
    /// s per tick
    pub dt: f64,
    /// Ticks between PSO velocity updates.
    pub update_period_ticks: u64,
    /// Source power.
    pub power: f64,
    /// m
    pub d_min: f64,
    pub trapped_window_ticks: usize,
    /// m
    pub trapped_epsilon: f64,
}

impl PsoParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return Err(format!("inertia must be in (0, 1), got {}", self.inertia));
        }
        for (name, v) in [
            ("cognitive", self.cognitive),
            ("social", self.social),
            ("vmax", self.vmax),
            ("comm_range", self.comm_range),
            ("dt", self.dt),
            ("power", self.power),
            ("d_min", self.d_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.n_robots == 0 {
            return Err("swarm needs at least one robot".into());
        }
        if self.update_period_ticks == 0 {
            return Err("PSO update period must be at least one tick".into());
        }
        if self.trapped_window_ticks == 0 {
            return Err("trapped window must be at least one tick".into());
        }
        Ok(())
    }
}

/// Swarm section of the run config. Distances in cell widths, times in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmConfig {
    pub n_robots: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub vmax_cells_per_s: f64,
    pub comm_range_cells: f64,
    pub dt: f64,
    pub update_period_s: f64,
    pub power: f64,
    pub d_min_m: f64,
    pub trapped_window_s: f64,
    pub trapped_epsilon_cells: f64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            n_robots: 20,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            vmax_cells_per_s: 1.5,
            comm_range_cells: 5.0,
            dt: 0.1,
            update_period_s: 1.0,
            power: 100.0,
            d_min_m: 0.01,
            trapped_window_s: 10.0,
            trapped_epsilon_cells: 0.25,
        }
    }
}

impl SwarmConfig {
    pub fn resolve(&self, cell_size: f64) -> Result<PsoParams, String> {
        let p = PsoParams {
            n_robots: self.n_robots,
            inertia: self.inertia,
            cognitive: self.cognitive,
            social: self.social,
            vmax: self.vmax_cells_per_s * cell_size,
            comm_range: self.comm_range_cells * cell_size,
            dt: self.dt,
            update_period_ticks: ((self.update_period_s / self.dt).round() as u64).max(1),
            power: self.power,
            d_min: self.d_min_m,
            trapped_window_ticks: ((self.trapped_window_s / self.dt).round() as usize).max(1),
            trapped_epsilon: self.trapped_epsilon_cells * cell_size,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Received intensity `P / max(d, d_min)²` at `pos`.
pub fn fitness(pos: Vec2, world: &GridWorld, power: f64, d_min: f64) -> f64 {
    let d = pos.distance(world.target).max(d_min);
    power / (d * d)
}

/// Social attractor for `robot`: the best personal best among Active robots
/// within `comm_range` of it, itself included. Ties go to the lowest id.
pub fn lbest_of(robot: &RobotState, swarm: &[RobotState], comm_range: f64) -> Vec2 {
    let mut best: Option<&RobotState> = None;
    for other in swarm {
        if !other.is_active() && other.id != robot.id {
            continue;
        }
        if other.id != robot.id && other.position.distance(robot.position) > comm_range {
            continue;
        }
        best = match best {
            None => Some(other),
            Some(b) if other.pbest_fitness > b.pbest_fitness => Some(other),
            Some(b) if other.pbest_fitness == b.pbest_fitness && other.id < b.id => Some(other),
            keep => keep,
        };
    }
    best.map_or(robot.pbest_pos, |b| b.pbest_pos)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Avoidance {
    pub position: Vec2,
    /// The straight move was rejected.
    pub blocked: bool,
    /// No candidate was accepted; the robot keeps its position and loses its velocity.
    pub stalled: bool,
}

/// Obstacle avoidance by axis projection: the straight move, then x-only,
/// then y-only; the first in-bounds candidate in an unblocked cell wins.
///
/// A robot already standing in a freshly marked cell may move inside it so
/// that it can leave; it can never enter a blocked cell.
pub fn avoid(candidate: Vec2, robot: &RobotState, world: &GridWorld, marked: &BTreeSet<CellIndex>) -> Avoidance {
    let current = world.cell_of(robot.position).ok();
    let passable = |p: Vec2| match world.cell_of(p) {
        Ok(cell) => {
            if world.static_obstacles.contains(&cell) {
                false
            } else {
                !marked.contains(&cell) || Some(cell) == current
            }
        }
        Err(_) => false,
    };
    if passable(candidate) {
        return Avoidance { position: candidate, blocked: false, stalled: false };
    }
    let x_only = Vec2::new(candidate.x, robot.position.y);
    if passable(x_only) {
        return Avoidance { position: x_only, blocked: true, stalled: false };
    }
    let y_only = Vec2::new(robot.position.x, candidate.y);
    if passable(y_only) {
        return Avoidance { position: y_only, blocked: true, stalled: false };
    }
    Avoidance { position: robot.position, blocked: true, stalled: true }
}

/// The two uniform draws consumed by one robot update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDraws {
    pub r1: f64,
    pub r2: f64,
}

impl StepDraws {
    /// Draws for `(tick, id)`, independent of the order robots are updated in.
    pub fn for_robot(stream: &RngStream, tick: u64, id: u32) -> Self {
        let mut s = stream.derive_u64(tick).derive_u64(u64::from(id));
        Self { r1: s.next_f64(), r2: s.next_f64() }
    }
}

/// One LBEST update for an Active robot; Deactivated robots come back unchanged.
pub fn step_robot(
    robot: &RobotState,
    lbest: Vec2,
    params: &PsoParams,
    world: &GridWorld,
    marked: &BTreeSet<CellIndex>,
    impulse: Vec2,
    draws: StepDraws,
) -> RobotState {
    if !robot.is_active() {
        return robot.clone();
    }
    let x = robot.position;
    let raw = robot.velocity * params.inertia
        + (robot.pbest_pos - x) * (params.cognitive * draws.r1)
        + (lbest - x) * (params.social * draws.r2)
        + impulse;
    move_robot(robot, raw.clamp_norm(params.vmax), params, world, marked)
}

/// Tick between PSO updates: keep the current velocity plus any impulse.
pub fn coast_robot(
    robot: &RobotState,
    params: &PsoParams,
    world: &GridWorld,
    marked: &BTreeSet<CellIndex>,
    impulse: Vec2,
) -> RobotState {
    if !robot.is_active() {
        return robot.clone();
    }
    move_robot(robot, (robot.velocity + impulse).clamp_norm(params.vmax), params, world, marked)
}

fn move_robot(
    robot: &RobotState,
    mut velocity: Vec2,
    params: &PsoParams,
    world: &GridWorld,
    marked: &BTreeSet<CellIndex>,
) -> RobotState {
    let x = robot.position;
    let outcome = avoid(x + velocity * params.dt, robot, world, marked);
    if outcome.stalled {
        velocity = Vec2::ZERO;
    }
    let mut next = robot.clone();
    next.position = outcome.position;
    next.velocity = velocity;
    let f = fitness(outcome.position, world, params.power, params.d_min);
    if f > next.pbest_fitness {
        next.pbest_fitness = f;
        next.pbest_pos = outcome.position;
    }
    next.window.push_back(WindowEntry { position: outcome.position, blocked: outcome.blocked });
    while next.window.len() > params.trapped_window_ticks {
        next.window.pop_front();
    }
    next
}

/// Deactivates every Active robot standing in a hazardous cell. Returns the
/// ids deactivated by this call.
pub fn apply_hazards(robots: &mut [RobotState], hazard_cells: &BTreeSet<CellIndex>, world: &GridWorld) -> Vec<u32> {
    let mut hit = Vec::new();
    for r in robots.iter_mut().filter(|r| r.is_active()) {
        if let Ok(cell) = world.cell_of(r.position) {
            if hazard_cells.contains(&cell) {
                r.status = RobotStatus::Deactivated;
                r.velocity = Vec2::ZERO;
                hit.push(r.id);
            }
        }
    }
    hit
}

/// Active robots that barely moved over a full window and hit at least one
/// blocked move in it.
pub fn trapped_robots(robots: &[RobotState], window_ticks: usize, epsilon: f64) -> BTreeSet<u32> {
    robots
        .iter()
        .filter(|r| r.is_active() && r.window.len() >= window_ticks && window_ticks > 0)
        .filter(|r| {
            let recent = r.window.iter().skip(r.window.len() - window_ticks);
            let mut any_blocked = false;
            let mut max_disp: f64 = 0.0;
            for e in recent {
                any_blocked |= e.blocked;
                max_disp = max_disp.max(e.position.distance(r.position));
            }
            any_blocked && max_disp < epsilon
        })
        .map(|r| r.id)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Swarm {
    pub robots: Vec<RobotState>,
    pub params: PsoParams,
    rng: RngStream,
}

impl Swarm {
    /// Places robots uniformly at random inside the square spawn area
    /// `[0, spawn_side)²` (meters), avoiding blocked cells.
    pub fn spawn(params: PsoParams, world: &GridWorld, spawn_side: f64, rng: RngStream) -> Self {
        let mut placement = rng.derive("spawn");
        let no_marks = BTreeSet::new();
        let side = spawn_side.min(world.max_x()).min(world.max_y()).max(1e-9);
        let free_cells: Vec<CellIndex> = world.all_cells().filter(|c| !world.is_blocked(*c, &no_marks)).collect();
        let robots = (0..params.n_robots as u32)
            .map(|id| {
                let mut pos = None;
                for _ in 0..1000 {
                    let p = Vec2::new(placement.uniform(0.0, side), placement.uniform(0.0, side));
                    if world.is_free_position(p, &no_marks) {
                        pos = Some(p);
                        break;
                    }
                }
                let pos = pos.unwrap_or_else(|| {
                    let cell = placement.choose(&free_cells).copied().unwrap_or(world.target_cell());
                    world.cell_center(cell)
                });
                RobotState::new(id, pos, fitness(pos, world, params.power, params.d_min))
            })
            .collect();
        Self { robots, params, rng: rng.derive("pso") }
    }

    /// PSO updates happen on ticks 1, 1 + period, 1 + 2·period, ...
    pub fn is_update_tick(&self, tick: u64) -> bool {
        tick.saturating_sub(1) % self.params.update_period_ticks == 0
    }

    /// Synchronous update: every lbest is computed from the pre-step states.
    pub fn step(&mut self, tick: u64, world: &GridWorld, marked: &BTreeSet<CellIndex>, impulses: &BTreeMap<u32, Vec2>) {
        let update = self.is_update_tick(tick);
        let before = &self.robots;
        let next: Vec<RobotState> = before
            .iter()
            .map(|r| {
                if !r.is_active() {
                    return r.clone();
                }
                let impulse = impulses.get(&r.id).copied().unwrap_or(Vec2::ZERO);
                if !update {
                    return coast_robot(r, &self.params, world, marked, impulse);
                }
                let lbest = lbest_of(r, before, self.params.comm_range);
                let draws = StepDraws::for_robot(&self.rng, tick, r.id);
                step_robot(r, lbest, &self.params, world, marked, impulse, draws)
            })
            .collect();
        self.robots = next;
    }

    pub fn active_count(&self) -> usize {
        self.robots.iter().filter(|r| r.is_active()).count()
    }

    pub fn deactivated_count(&self) -> usize {
        self.robots.len() - self.active_count()
    }

    pub fn best_fitness(&self) -> f64 {
        self.robots.iter().map(|r| r.pbest_fitness).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn trapped(&self) -> BTreeSet<u32> {
        trapped_robots(&self.robots, self.params.trapped_window_ticks, self.params.trapped_epsilon)
    }
}
