use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::hazard::{HazardConfig, HazardField, HazardKind, HazardParams};
use crate::intervention::SwipeParams;
use crate::metrics::MetricsConfig;
use crate::rng::RngStream;
use crate::sagat::{schedule_pauses, PauseConfig, QueryBank, ScoringConfig};
use crate::sim::{Simulation, TickOutcome};
use crate::swarm::{PsoParams, Swarm, SwarmConfig};
use crate::world::{CellIndex, GridWorld, RegionMap, WorldConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attempt {
    #[default]
    A1,
    A2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    pub swipe_radius_cells: f64,
    /// Defaults to twice the robot speed limit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_impulse_cells_per_s: Option<f64>,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self { swipe_radius_cells: 3.0, k_impulse_cells_per_s: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogConfig {
    pub state_hash_every: u64,
    pub snapshot_every: u64,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self { state_hash_every: 50, snapshot_every: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub seed: u64,
    pub task_duration_s: f64,
    pub hazard_kind: HazardKind,
    pub attempt: Attempt,
    pub participant_id: String,
    pub task_order_index: u32,
    pub world: WorldConfig,
    pub swarm: SwarmConfig,
    pub hazard: HazardConfig,
    pub intervention: InterventionConfig,
    pub pauses: PauseConfig,
    pub scoring: ScoringConfig,
    pub metrics: MetricsConfig,
    pub log: LogConfig,
    /// Custom query bank; the built-in one is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sagat_bank: Option<QueryBank>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task_duration_s: 300.0,
            hazard_kind: HazardKind::Spr,
            attempt: Attempt::A1,
            participant_id: "p00".into(),
            task_order_index: 0,
            world: WorldConfig::default(),
            swarm: SwarmConfig::default(),
            hazard: HazardConfig::default(),
            intervention: InterventionConfig::default(),
            pauses: PauseConfig::default(),
            scoring: ScoringConfig::default(),
            metrics: MetricsConfig::default(),
            log: LogConfig::default(),
            sagat_bank: None,
        }
    }
}

/// Everything derived from a config before the first tick.
#[derive(Clone, Debug)]
pub struct SessionSetup {
    pub config: SessionConfig,
    pub world: GridWorld,
    pub regions: RegionMap,
    pub pso: PsoParams,
    pub hazard_params: HazardParams,
    pub swipe: SwipeParams,
    pub bank: QueryBank,
    pub pause_ticks: Vec<u64>,
    pub total_ticks: u64,
    pub dt: f64,
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self, SessionError> {
        toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))
    }

    pub fn stream(&self, label: &str) -> RngStream {
        RngStream::named(self.seed, label)
    }

    pub fn prepare(&self) -> Result<SessionSetup, SessionError> {
        let cfg = |m: String| SessionError::Config(m);
        let dt = self.swarm.dt;
        if !(self.task_duration_s > 0.0 && self.task_duration_s.is_finite()) {
            return Err(cfg(format!("task duration must be positive, got {}", self.task_duration_s)));
        }
        if !(dt > 0.0) {
            return Err(cfg(format!("dt must be positive, got {dt}")));
        }
        let exact = self.task_duration_s / dt;
        if (exact - exact.round()).abs() > 1e-6 {
            return Err(cfg(format!("duration {} s is not a whole number of {dt} s ticks", self.task_duration_s)));
        }
        let total_ticks = exact.round() as u64;
        if self.log.state_hash_every == 0 || self.log.snapshot_every == 0 || self.metrics.sample_every == 0 {
            return Err(cfg("log and metric intervals must be at least one tick".into()));
        }
        let mut layout = RngStream::named(self.world.layout_seed.unwrap_or(self.seed), "world");
        let world = self.world.build(&mut layout).map_err(|e| cfg(e.to_string()))?;
        let regions = world.quadrant_regions().map_err(|e| cfg(e.to_string()))?;
        let pso = self.swarm.resolve(world.cell_size).map_err(cfg)?;
        let hazard_params = self.hazard.resolve(self.hazard_kind, dt).map_err(|e| cfg(e.to_string()))?;
        if !(self.intervention.swipe_radius_cells > 0.0) {
            return Err(cfg("swipe radius must be positive".into()));
        }
        let swipe = SwipeParams {
            radius: self.intervention.swipe_radius_cells * world.cell_size,
            k_impulse: self.intervention.k_impulse_cells_per_s.map_or(2.0 * pso.vmax, |k| k * world.cell_size),
        };
        let bank = match &self.sagat_bank {
            Some(b) => {
                b.validate().map_err(|e| cfg(e.to_string()))?;
                b.clone()
            }
            None => QueryBank::default_bank(),
        };
        if bank.pause_count() != self.pauses.windows.len() {
            return Err(cfg(format!(
                "query bank has {} pauses but {} pause windows are configured",
                bank.pause_count(),
                self.pauses.windows.len()
            )));
        }
        let pause_ticks = schedule_pauses(self.task_duration_s, dt, &self.pauses, &mut self.stream("pauses"))
            .map_err(|e| cfg(e.to_string()))?;
        Ok(SessionSetup {
            config: self.clone(),
            world,
            regions,
            pso,
            hazard_params,
            swipe,
            bank,
            pause_ticks,
            total_ticks,
            dt,
        })
    }
}

impl SessionSetup {
    /// Cells kept free of the initial hazard placement.
    pub fn hazard_exclusion(&self) -> BTreeSet<CellIndex> {
        let mut excl = self.config.world.spawn_cells_set();
        excl.insert(self.world.target_cell());
        excl
    }

    pub fn start(&self) -> Result<(Simulation, TickOutcome), SessionError> {
        let c = &self.config;
        let swarm = Swarm::spawn(
            self.pso.clone(),
            &self.world,
            f64::from(c.world.spawn_cells) * self.world.cell_size,
            c.stream("swarm"),
        );
        let hazard =
            HazardField::new(c.hazard_kind, self.hazard_params.clone(), c.stream("hazard"), self.hazard_exclusion())
                .map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(Simulation::start(
            self.world.clone(),
            self.regions.clone(),
            swarm,
            hazard,
            self.swipe.clone(),
            c.metrics.naq_mode,
        ))
    }
}
