//! Dynamic hazard processes.
//!
//! * `Dis`: at every interval, a batch of random free cells turns hazardous
//!   and expires after a fixed duration.
//! * `Mov`: a connected footprint translates one cell per step.
//! * `Spr`: starts at one origin cell; at every spread interval each free
//!   neighbor of each active cell ignites with a fixed probability. Cells
//!   never recover.
//!
//! All draws come from a counter-based stream keyed by tick, so a forked
//! field evolves exactly as the live one would.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;
use crate::world::{CellIndex, GridWorld, Neighborhood};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HazardError {
    #[error("alert event has no affected cells")]
    EmptyEvent,
    #[error("invalid hazard parameter: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HazardKind {
    Dis,
    Mov,
    Spr,
    /// No hazard process; used for calibration runs.
    #[serde(rename = "off")]
    Off,
}

impl HazardKind {
    pub const STUDY: [HazardKind; 3] = [HazardKind::Dis, HazardKind::Mov, HazardKind::Spr];

    fn verb(self) -> &'static str {
        match self {
            HazardKind::Dis => "appearing",
            HazardKind::Mov => "moving",
            HazardKind::Spr => "spreading",
            HazardKind::Off => "present",
        }
    }

    pub fn default_theme(self) -> AlertTheme {
        match self {
            HazardKind::Spr | HazardKind::Off => AlertTheme::Fire,
            HazardKind::Mov => AlertTheme::FallingObjects,
            HazardKind::Dis => AlertTheme::Wind,
        }
    }
}

impl fmt::Display for HazardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            HazardKind::Dis => "Dis",
            HazardKind::Mov => "Mov",
            HazardKind::Spr => "Spr",
            HazardKind::Off => "off",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertTheme {
    Fire,
    FallingObjects,
    Wind,
}

impl AlertTheme {
    fn subject(self) -> &'static str {
        match self {
            AlertTheme::Fire => "Fire",
            AlertTheme::FallingObjects => "Falling objects",
            AlertTheme::Wind => "Strong winds",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkPolicy {
    #[default]
    RandomWalk,
    /// Keep the heading; turn clockwise when blocked.
    PatrolCycle,
}

/// Hazard parameters in ticks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub dis_interval_ticks: u64,
    pub dis_cells_per_event: usize,
    /// `None` means Dis cells never expire.
    pub dis_duration_ticks: Option<u64>,
    pub mov_footprint_size: usize,
    pub mov_step_interval_ticks: u64,
    pub mov_walk_policy: WalkPolicy,
    pub spr_origin_cell: Option<CellIndex>,
    pub spr_spread_interval_ticks: u64,
    pub spr_spread_probability: f64,
    pub neighborhood: Neighborhood,
    pub alert_latency_ticks: u64,
    pub theme: AlertTheme,
    /// Probability that a newly hazardous cell is left out of its alert.
    pub alert_omission_probability: f64,
}

impl HazardParams {
    pub fn validate(&self) -> Result<(), HazardError> {
        let bad = |m: &str| Err(HazardError::InvalidParams(m.to_string()));
        if self.dis_interval_ticks == 0 || self.mov_step_interval_ticks == 0 || self.spr_spread_interval_ticks == 0 {
            return bad("intervals must be at least one tick");
        }
        if self.dis_duration_ticks == Some(0) {
            return bad("Dis duration must be at least one tick");
        }
        if !(0.0..=1.0).contains(&self.spr_spread_probability) {
            return bad("spread probability must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.alert_omission_probability) {
            return bad("alert omission probability must be in [0, 1]");
        }
        if self.mov_footprint_size == 0 {
            return bad("Mov footprint must contain at least one cell");
        }
        Ok(())
    }
}

/// Hazard section of the run config, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazardConfig {
    pub dis_interval_s: f64,
    pub dis_cells_per_event: usize,
    pub dis_duration_s: Option<f64>,
    pub mov_footprint_size: usize,
    pub mov_step_interval_s: f64,
    pub mov_walk_policy: WalkPolicy,
    pub spr_origin_cell: Option<CellIndex>,
    pub spr_spread_interval_s: f64,
    pub spr_spread_probability: f64,
    pub neighborhood: Neighborhood,
    pub alert_latency_s: f64,
    pub theme: Option<AlertTheme>,
    pub alert_omission_probability: f64,
}

impl Default for HazardConfig {
    fn default() -> Self {
        Self {
            dis_interval_s: 15.0,
            dis_cells_per_event: 3,
            dis_duration_s: Some(30.0),
            mov_footprint_size: 4,
            mov_step_interval_s: 5.0,
            mov_walk_policy: WalkPolicy::RandomWalk,
            spr_origin_cell: None,
            spr_spread_interval_s: 10.0,
            spr_spread_probability: 0.35,
            neighborhood: Neighborhood::VonNeumann,
            alert_latency_s: 0.0,
            theme: None,
            alert_omission_probability: 0.0,
        }
    }
}

impl HazardConfig {
    pub fn resolve(&self, kind: HazardKind, dt: f64) -> Result<HazardParams, HazardError> {
        let ticks = |s: f64| ((s / dt).round().max(1.0)) as u64;
        let params = HazardParams {
            dis_interval_ticks: ticks(self.dis_interval_s),
            dis_cells_per_event: self.dis_cells_per_event,
            dis_duration_ticks: self.dis_duration_s.map(ticks),
            mov_footprint_size: self.mov_footprint_size,
            mov_step_interval_ticks: ticks(self.mov_step_interval_s),
            mov_walk_policy: self.mov_walk_policy,
            spr_origin_cell: self.spr_origin_cell,
            spr_spread_interval_ticks: ticks(self.spr_spread_interval_s),
            spr_spread_probability: self.spr_spread_probability,
            neighborhood: self.neighborhood,
            alert_latency_ticks: (self.alert_latency_s / dt).round().max(0.0) as u64,
            theme: self.theme.unwrap_or_else(|| kind.default_theme()),
            alert_omission_probability: self.alert_omission_probability,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProcessState {
    Off,
    Dis { expiries: BTreeMap<CellIndex, u64> },
    Mov { footprint: Vec<CellIndex>, heading: (i64, i64) },
    Spr { frontier: BTreeSet<CellIndex> },
}

/// One change to the hazard ground truth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardEvent {
    pub tick: u64,
    pub kind: HazardKind,
    pub activated: Vec<CellIndex>,
    pub cleared: Vec<CellIndex>,
    /// Sampling found no eligible cell; the event was a no-op.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exhausted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertMessage {
    /// Tick at which the alert reaches the operator.
    pub tick: u64,
    pub hazard_kind: HazardKind,
    pub affected_cells: Vec<CellIndex>,
    pub text: String,
}

/// Renders the operator-facing alert for newly hazardous cells.
pub fn render_alert(
    tick: u64,
    kind: HazardKind,
    cells: &[CellIndex],
    theme: AlertTheme,
) -> Result<AlertMessage, HazardError> {
    if cells.is_empty() {
        return Err(HazardError::EmptyEvent);
    }
    let list = cells.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
    let noun = if cells.len() == 1 { "cell" } else { "cells" };
    Ok(AlertMessage {
        tick,
        hazard_kind: kind,
        affected_cells: cells.to_vec(),
        text: format!("{} reported {} at {} {}", theme.subject(), kind.verb(), noun, list),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardField {
    pub kind: HazardKind,
    active: BTreeSet<CellIndex>,
    state: ProcessState,
    rng: RngStream,
    params: HazardParams,
    /// Cells never used for the initial Mov footprint or Spr origin.
    exclusion: BTreeSet<CellIndex>,
    pending_alerts: VecDeque<AlertMessage>,
    last_tick: Option<u64>,
}

/// Result of advancing a field by one tick.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HazardStep {
    pub events: Vec<HazardEvent>,
    /// Alerts whose delivery tick is this tick.
    pub alerts: Vec<AlertMessage>,
}

impl HazardField {
    pub fn new(
        kind: HazardKind,
        params: HazardParams,
        rng: RngStream,
        exclusion: BTreeSet<CellIndex>,
    ) -> Result<Self, HazardError> {
        params.validate()?;
        let state = match kind {
            HazardKind::Off => ProcessState::Off,
            HazardKind::Dis => ProcessState::Dis { expiries: BTreeMap::new() },
            HazardKind::Mov => ProcessState::Mov { footprint: Vec::new(), heading: (1, 0) },
            HazardKind::Spr => ProcessState::Spr { frontier: BTreeSet::new() },
        };
        Ok(Self {
            kind,
            active: BTreeSet::new(),
            state,
            rng,
            params,
            exclusion,
            pending_alerts: VecDeque::new(),
            last_tick: None,
        })
    }

    pub fn active_cells(&self) -> &BTreeSet<CellIndex> {
        &self.active
    }

    pub fn params(&self) -> &HazardParams {
        &self.params
    }

    pub fn process_state(&self) -> &ProcessState {
        &self.state
    }

    pub fn is_hazardous(&self, cell: CellIndex) -> bool {
        self.active.contains(&cell)
    }

    /// Advances to `tick`. Tick 0 initializes the Mov footprint and the Spr
    /// origin; later ticks apply the kind's interval rule.
    pub fn step(&mut self, tick: u64, world: &GridWorld) -> HazardStep {
        if let Some(last) = self.last_tick {
            debug_assert!(tick > last, "hazard ticks must strictly increase");
            if tick <= last {
                return HazardStep::default();
            }
        }
        self.last_tick = Some(tick);
        let mut rng = self.rng.derive_u64(tick);
        let mut events = Vec::new();
        match self.kind {
            HazardKind::Off => {}
            HazardKind::Dis => self.step_dis(tick, world, &mut rng, &mut events),
            HazardKind::Mov => self.step_mov(tick, world, &mut rng, &mut events),
            HazardKind::Spr => self.step_spr(tick, world, &mut rng, &mut events),
        }
        for ev in &events {
            self.queue_alert(ev, &mut rng);
        }
        let mut alerts = Vec::new();
        while self.pending_alerts.front().is_some_and(|a| a.tick <= tick) {
            alerts.push(self.pending_alerts.pop_front().unwrap());
        }
        HazardStep { events, alerts }
    }

    fn queue_alert(&mut self, ev: &HazardEvent, rng: &mut RngStream) {
        let p = self.params.alert_omission_probability;
        let cells: Vec<CellIndex> = ev
            .activated
            .iter()
            .copied()
            .filter(|_| p <= 0.0 || !rng.bernoulli(p))
            .collect();
        if let Ok(alert) = render_alert(ev.tick + self.params.alert_latency_ticks, self.kind, &cells, self.params.theme) {
            self.pending_alerts.push_back(alert);
        }
    }

    fn eligible(&self, world: &GridWorld, cell: CellIndex) -> bool {
        !world.static_obstacles.contains(&cell) && !self.active.contains(&cell)
    }

    fn step_dis(&mut self, tick: u64, world: &GridWorld, rng: &mut RngStream, events: &mut Vec<HazardEvent>) {
        let ProcessState::Dis { expiries } = &mut self.state else { unreachable!() };
        let cleared: Vec<CellIndex> = expiries.iter().filter(|(_, &e)| e <= tick).map(|(c, _)| *c).collect();
        for c in &cleared {
            expiries.remove(c);
            self.active.remove(c);
        }
        if !cleared.is_empty() {
            events.push(HazardEvent { tick, kind: HazardKind::Dis, activated: vec![], cleared, exhausted: false });
        }
        if tick == 0 || tick % self.params.dis_interval_ticks != 0 {
            return;
        }
        let mut pool: Vec<CellIndex> = world.all_cells().filter(|c| self.eligible(world, *c)).collect();
        if pool.is_empty() {
            events.push(HazardEvent { tick, kind: HazardKind::Dis, activated: vec![], cleared: vec![], exhausted: true });
            return;
        }
        let n = self.params.dis_cells_per_event.min(pool.len());
        // Partial Fisher-Yates: the first n slots are a uniform sample.
        for i in 0..n {
            let j = i + rng.below(pool.len() - i);
            pool.swap(i, j);
        }
        let mut activated: Vec<CellIndex> = pool[..n].to_vec();
        activated.sort();
        let ProcessState::Dis { expiries } = &mut self.state else { unreachable!() };
        for c in &activated {
            self.active.insert(*c);
            let expiry = self.params.dis_duration_ticks.map_or(u64::MAX, |d| tick + d);
            expiries.insert(*c, expiry);
        }
        events.push(HazardEvent { tick, kind: HazardKind::Dis, activated, cleared: vec![], exhausted: false });
    }

    fn initial_candidates(&self, world: &GridWorld) -> Vec<CellIndex> {
        world
            .all_cells()
            .filter(|c| !world.static_obstacles.contains(c) && !self.exclusion.contains(c))
            .collect()
    }

    fn step_mov(&mut self, tick: u64, world: &GridWorld, rng: &mut RngStream, events: &mut Vec<HazardEvent>) {
        if tick == 0 {
            let footprint = self.grow_footprint(world, rng);
            if footprint.is_empty() {
                events.push(HazardEvent { tick, kind: HazardKind::Mov, activated: vec![], cleared: vec![], exhausted: true });
                return;
            }
            let offsets = self.params.neighborhood.offsets();
            let heading = offsets[rng.below(offsets.len())];
            self.active = footprint.iter().copied().collect();
            let mut activated = footprint.clone();
            activated.sort();
            self.state = ProcessState::Mov { footprint, heading };
            events.push(HazardEvent { tick, kind: HazardKind::Mov, activated, cleared: vec![], exhausted: false });
            return;
        }
        if tick % self.params.mov_step_interval_ticks != 0 {
            return;
        }
        let ProcessState::Mov { footprint, heading } = &self.state else { unreachable!() };
        if footprint.is_empty() {
            return;
        }
        let offsets = self.params.neighborhood.offsets();
        let order: Vec<(i64, i64)> = match self.params.mov_walk_policy {
            WalkPolicy::RandomWalk => {
                let mut o = offsets.to_vec();
                rng.shuffle(&mut o);
                o
            }
            WalkPolicy::PatrolCycle => {
                // Clockwise turn order starting from the current heading.
                let start = offsets.iter().position(|h| h == heading).unwrap_or(0);
                (0..offsets.len()).map(|k| offsets[(start + offsets.len() - k) % offsets.len()]).collect()
            }
        };
        for dir in order {
            if let Some(moved) = translate(footprint, dir, world) {
                let old: BTreeSet<CellIndex> = footprint.iter().copied().collect();
                let new: BTreeSet<CellIndex> = moved.iter().copied().collect();
                let activated: Vec<CellIndex> = new.difference(&old).copied().collect();
                let cleared: Vec<CellIndex> = old.difference(&new).copied().collect();
                self.active = new;
                self.state = ProcessState::Mov { footprint: moved, heading: dir };
                events.push(HazardEvent { tick, kind: HazardKind::Mov, activated, cleared, exhausted: false });
                return;
            }
        }
        // Boxed in: the footprint stays put this step.
    }

    /// Randomly grown connected footprint of the configured size (or as large
    /// as the free component allows).
    fn grow_footprint(&self, world: &GridWorld, rng: &mut RngStream) -> Vec<CellIndex> {
        let candidates = self.initial_candidates(world);
        let Some(&seed) = rng.choose(&candidates) else { return Vec::new() };
        let mut cells = vec![seed];
        let mut members: BTreeSet<CellIndex> = [seed].into();
        while cells.len() < self.params.mov_footprint_size {
            let frontier: Vec<CellIndex> = members
                .iter()
                .flat_map(|c| world.neighbors(*c, self.params.neighborhood))
                .filter(|n| !members.contains(n) && !world.static_obstacles.contains(n))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let Some(&next) = rng.choose(&frontier) else { break };
            members.insert(next);
            cells.push(next);
        }
        cells
    }

    fn step_spr(&mut self, tick: u64, world: &GridWorld, rng: &mut RngStream, events: &mut Vec<HazardEvent>) {
        let hood = self.params.neighborhood;
        if tick == 0 {
            let origin = match self.params.spr_origin_cell {
                Some(c) if world.is_valid(c) && !world.static_obstacles.contains(&c) => Some(c),
                Some(_) => None,
                None => rng.choose(&self.initial_candidates(world)).copied(),
            };
            let Some(origin) = origin else {
                events.push(HazardEvent { tick, kind: HazardKind::Spr, activated: vec![], cleared: vec![], exhausted: true });
                return;
            };
            self.active.insert(origin);
            self.state = ProcessState::Spr { frontier: [origin].into() };
            events.push(HazardEvent { tick, kind: HazardKind::Spr, activated: vec![origin], cleared: vec![], exhausted: false });
            return;
        }
        if tick % self.params.spr_spread_interval_ticks != 0 {
            return;
        }
        let ProcessState::Spr { frontier } = &self.state else { unreachable!() };
        let mut newly = BTreeSet::new();
        for cell in frontier.iter() {
            for n in world.neighbors(*cell, hood) {
                if self.eligible(world, n) && !newly.contains(&n) && rng.bernoulli(self.params.spr_spread_probability) {
                    newly.insert(n);
                }
            }
        }
        self.active.extend(newly.iter().copied());
        let frontier: BTreeSet<CellIndex> = self
            .active
            .iter()
            .copied()
            .filter(|c| world.neighbors(*c, hood).any(|n| self.eligible(world, n)))
            .collect();
        self.state = ProcessState::Spr { frontier };
        if !newly.is_empty() {
            events.push(HazardEvent {
                tick,
                kind: HazardKind::Spr,
                activated: newly.into_iter().collect(),
                cleared: vec![],
                exhausted: false,
            });
        }
    }
}

fn translate(footprint: &[CellIndex], (dc, dr): (i64, i64), world: &GridWorld) -> Option<Vec<CellIndex>> {
    footprint
        .iter()
        .map(|c| {
            let col = i64::from(c.col) + dc;
            let row = i64::from(c.row) + dr;
            if col < 0 || row < 0 || col >= i64::from(world.width) || row >= i64::from(world.height) {
                return None;
            }
            let moved = CellIndex::new(col as u32, row as u32);
            (!world.static_obstacles.contains(&moved)).then_some(moved)
        })
        .collect()
}
