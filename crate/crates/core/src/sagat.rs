//! SAGAT: query bank, ground-truth extraction, scoring and aggregation,
//! plus pause scheduling and a scripted respondent for headless runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;
use crate::sim::Simulation;
use crate::world::{CellIndex, Region, Vec2};

pub const DEFAULT_BANK: &str = include_str!("../assets/sagat_bank.toml");

/// Every requirement tag of the goal-directed task analysis.
pub const REQUIREMENT_TAGS: [&str; 25] = [
    "Dim1.1", "Dim1.2", "Dim1.3", "Dim1.4", "Dim1.5", "Dim1.6", "Dim2.1", "Dim2.2", "Dim2.3", "Dim2.4", "Dim2.5",
    "Dim2.6", "Dim3.1", "Dim3.2", "Dim3.3", "Dim4.1", "Dim4.2", "Dim4.3", "Dim4.4", "Dim5.1", "Dim5.2", "Dim5.3",
    "Dim6.1", "Dim6.2", "Dim6.3",
];

pub const COMPASS_LABELS: [&str; 5] = ["East", "North", "West", "South", "Not moving"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SagatError {
    #[error("query bank parse error: {0}")]
    Parse(String),
    #[error("invalid query {id}: {reason}")]
    InvalidQuery { id: String, reason: String },
    #[error("duplicate query id {0}")]
    DuplicateId(String),
    #[error("answer does not match query kind for {0}")]
    AnswerMismatch(String),
    #[error("option index {index} out of range for {id}")]
    OptionOutOfRange { id: String, index: usize },
    #[error("no scored responses to aggregate")]
    EmptyScores,
    #[error("pause schedule infeasible: {0}")]
    InfeasibleSchedule(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SaLevel {
    L1,
    L2,
    L3,
}

impl SaLevel {
    pub const ALL: [SaLevel; 3] = [SaLevel::L1, SaLevel::L2, SaLevel::L3];
}

impl fmt::Display for SaLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Mcq,
    Cmq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum McqOptions {
    Regions,
    Compass,
    /// Four ascending edges cut the line into five contiguous bins.
    Bins { edges: [f64; 4], labels: [String; 5] },
}

impl McqOptions {
    pub fn labels(&self) -> Vec<String> {
        match self {
            McqOptions::Regions => Region::ALL.iter().map(|r| r.label().to_string()).collect(),
            McqOptions::Compass => COMPASS_LABELS.iter().map(|s| s.to_string()).collect(),
            McqOptions::Bins { labels, .. } => labels.to_vec(),
        }
    }
}

/// Index of the bin holding `value`: the number of edges at or below it.
pub fn bin_index(edges: &[f64; 4], value: f64) -> usize {
    edges.iter().filter(|&&e| value >= e).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    ActiveRobotCells,
    TargetRegion,
    RemainingTime,
    ElapsedTime,
    CentroidDistance,
    NearestDistance,
    NearTargetCount,
    NearTargetCells,
    NearTargetPercent,
    MajorityActiveRegion,
    MeanSpeed,
    Heading,
    OccupiedRegions,
    HazardCells,
    HazardCellCount,
    MarkedCells,
    DeactivatedCells,
    TrappedCells,
    DeactivatedRegionCells,
    TrappedRegionCells,
    FutureNearTargetCount,
    FutureOccupiedRegions,
    FutureNearTargetPercent,
    TimeToReachTarget,
    FutureNewHazardCells,
    FutureClearableMarks,
    FutureDeactivations,
    FutureTrappedCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Output {
    Cells,
    Region,
    Compass,
    Number,
}

impl Extractor {
    pub fn is_projection(self) -> bool {
        use Extractor::*;
        matches!(
            self,
            FutureNearTargetCount
                | FutureOccupiedRegions
                | FutureNearTargetPercent
                | TimeToReachTarget
                | FutureNewHazardCells
                | FutureClearableMarks
                | FutureDeactivations
                | FutureTrappedCount
        )
    }

    fn output(self) -> Output {
        use Extractor::*;
        match self {
            ActiveRobotCells | NearTargetCells | HazardCells | MarkedCells | DeactivatedCells | TrappedCells
            | DeactivatedRegionCells | TrappedRegionCells => Output::Cells,
            TargetRegion | MajorityActiveRegion => Output::Region,
            Heading => Output::Compass,
            _ => Output::Number,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSettings {
    pub near_target_cells: f64,
    pub reach_cells: f64,
    pub horizon_s: f64,
    pub stationary_cells_per_s: f64,
}

impl Default for BankSettings {
    fn default() -> Self {
        Self { near_target_cells: 3.0, reach_cells: 1.0, horizon_s: 10.0, stationary_cells_per_s: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SagatQuery {
    pub id: String,
    /// 1-based pause this query is asked in.
    pub pause: usize,
    pub level: SaLevel,
    pub dimension: u8,
    pub tag: String,
    pub kind: QueryKind,
    pub prompt: String,
    pub extractor: Extractor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<McqOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
}

impl SagatQuery {
    fn invalid(&self, reason: impl Into<String>) -> SagatError {
        SagatError::InvalidQuery { id: self.id.clone(), reason: reason.into() }
    }

    pub fn validate(&self) -> Result<(), SagatError> {
        if !(1..=6).contains(&self.dimension) {
            return Err(self.invalid("dimension must be 1..6"));
        }
        if self.pause == 0 {
            return Err(self.invalid("pause numbers start at 1"));
        }
        if self.extractor.is_projection() != (self.level == SaLevel::L3) {
            return Err(self.invalid("projection extractors belong to L3 and only L3"));
        }
        if let Some(h) = self.horizon_s {
            if !(h > 0.0) {
                return Err(self.invalid("horizon must be positive"));
            }
        }
        let out = self.extractor.output();
        match (self.kind, &self.options) {
            (QueryKind::Cmq, None) if out == Output::Cells => Ok(()),
            (QueryKind::Cmq, _) => Err(self.invalid("cell-marking queries need a cell extractor and no options")),
            (QueryKind::Mcq, Some(McqOptions::Regions)) if out == Output::Region => Ok(()),
            (QueryKind::Mcq, Some(McqOptions::Compass)) if out == Output::Compass => Ok(()),
            (QueryKind::Mcq, Some(McqOptions::Bins { edges, .. })) if out == Output::Number => {
                if edges.windows(2).all(|w| w[0] < w[1]) && edges.iter().all(|e| e.is_finite()) {
                    Ok(())
                } else {
                    Err(self.invalid("bin edges must be finite and strictly ascending"))
                }
            }
            (QueryKind::Mcq, _) => Err(self.invalid("options do not fit the extractor")),
        }
    }

    pub fn option_labels(&self) -> Vec<String> {
        self.options.as_ref().map(McqOptions::labels).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryBank {
    #[serde(default)]
    pub settings: BankSettings,
    #[serde(rename = "query")]
    pub queries: Vec<SagatQuery>,
}

impl QueryBank {
    pub fn from_toml(text: &str) -> Result<Self, SagatError> {
        let bank: QueryBank = toml::from_str(text).map_err(|e| SagatError::Parse(e.to_string()))?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn default_bank() -> Self {
        Self::from_toml(DEFAULT_BANK).expect("embedded bank is valid")
    }

    pub fn validate(&self) -> Result<(), SagatError> {
        let mut ids = BTreeSet::new();
        for q in &self.queries {
            q.validate()?;
            if !ids.insert(q.id.as_str()) {
                return Err(SagatError::DuplicateId(q.id.clone()));
            }
        }
        if !(self.settings.horizon_s > 0.0) {
            return Err(SagatError::Parse("settings.horizon_s must be positive".into()));
        }
        Ok(())
    }

    pub fn pause_count(&self) -> usize {
        self.queries.iter().map(|q| q.pause).max().unwrap_or(0)
    }

    /// Queries of one pause in bank order.
    pub fn for_pause(&self, pause: usize) -> Vec<&SagatQuery> {
        self.queries.iter().filter(|q| q.pause == pause).collect()
    }

    pub fn get(&self, id: &str) -> Option<&SagatQuery> {
        self.queries.iter().find(|q| q.id == id)
    }

    pub fn missing_tags(&self) -> Vec<&'static str> {
        REQUIREMENT_TAGS.iter().copied().filter(|t| !self.queries.iter().any(|q| q.tag == *t)).collect()
    }

    pub fn horizon_s(&self, q: &SagatQuery) -> f64 {
        q.horizon_s.unwrap_or(self.settings.horizon_s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Truth {
    /// `value` is the raw quantity behind the option (an index for regions
    /// and headings; may be infinite when something never happens).
    Choice {
        index: usize,
        #[serde(deserialize_with = "null_is_infinite")]
        value: f64,
    },
    Cells { cells: BTreeSet<CellIndex> },
}

/// JSON has no infinity; serde_json writes it as null.
fn null_is_infinite<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Answer {
    Choice { index: usize },
    DontKnow,
    Cells { cells: BTreeSet<CellIndex> },
    NotApplicable,
}

impl Answer {
    pub fn fits(&self, kind: QueryKind) -> bool {
        match self {
            Answer::Choice { .. } | Answer::DontKnow => kind == QueryKind::Mcq,
            Answer::Cells { .. } | Answer::NotApplicable => kind == QueryKind::Cmq,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SagatResponse {
    pub query_id: String,
    pub answer: Answer,
    pub latency_ms: u64,
}

/// Timing needed to read the quantities the bank asks about.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractContext {
    pub dt: f64,
    pub task_ticks: u64,
}

/// What a passive continuation of the simulation looks like.
#[derive(Clone, Debug)]
pub struct Forecast {
    pub end: Simulation,
    pub new_hazard_cells: BTreeSet<CellIndex>,
    pub deactivations: usize,
    /// First tick (possibly the start tick) at which an active robot was
    /// within reach of the target.
    pub reached_at: Option<u64>,
}

/// Rolls a copy of `sim` forward `ticks` with a passive operator, stopping
/// early at `stop_on_reach` if given.
pub fn forecast(sim: &Simulation, ticks: u64, stop_on_reach: Option<f64>) -> Forecast {
    let mut end = sim.clone();
    let start_hazard = sim.hazard.active_cells().clone();
    let reached = |s: &Simulation| stop_on_reach.is_some_and(|r| s.tp().is_some_and(|tp| tp.na <= r));
    let mut out = Forecast { end: sim.clone(), new_hazard_cells: BTreeSet::new(), deactivations: 0, reached_at: None };
    if reached(&end) {
        out.reached_at = Some(end.tick);
        out.end = end;
        return out;
    }
    for _ in 0..ticks {
        let step = end.step(Vec::new());
        for ev in &step.hazard.events {
            out.new_hazard_cells.extend(ev.activated.iter().filter(|c| !start_hazard.contains(c)));
        }
        out.deactivations += step.deactivated.len();
        if reached(&end) {
            out.reached_at = Some(end.tick);
            break;
        }
    }
    out.end = end;
    out
}

fn active_positions(sim: &Simulation) -> Vec<Vec2> {
    sim.swarm.robots.iter().filter(|r| r.is_active()).map(|r| r.position).collect()
}

fn cells_of_positions(sim: &Simulation, positions: impl Iterator<Item = Vec2>) -> BTreeSet<CellIndex> {
    positions.filter_map(|p| sim.world.cell_of(p).ok()).collect()
}

/// Region holding the most of `cells` (multiset); ties go to the first in
/// region order. `None` for an empty input.
fn majority_region(sim: &Simulation, cells: &[CellIndex]) -> Option<Region> {
    let mut counts = [0usize; 5];
    for c in cells {
        counts[sim.regions.region_of(*c).index()] += 1;
    }
    let best = *counts.iter().max()?;
    (best > 0).then(|| Region::ALL[counts.iter().position(|&c| c == best).unwrap_or(0)])
}

fn near_target(sim: &Simulation, settings: &BankSettings) -> Vec<Vec2> {
    let radius = settings.near_target_cells * sim.world.cell_size;
    active_positions(sim).into_iter().filter(|p| p.distance(sim.world.target) <= radius).collect()
}

fn occupied_regions(sim: &Simulation) -> usize {
    let regions: BTreeSet<Region> =
        active_positions(sim).into_iter().filter_map(|p| sim.world.cell_of(p).ok()).map(|c| sim.regions.region_of(c)).collect();
    regions.len()
}

fn near_percent(sim: &Simulation, settings: &BankSettings) -> f64 {
    let n = sim.swarm.active_count();
    if n == 0 {
        0.0
    } else {
        100.0 * near_target(sim, settings).len() as f64 / n as f64
    }
}

fn trapped_cells(sim: &Simulation) -> Vec<CellIndex> {
    let ids = sim.swarm.trapped();
    sim.swarm.robots.iter().filter(|r| ids.contains(&r.id)).filter_map(|r| sim.world.cell_of(r.position).ok()).collect()
}

fn region_cells(sim: &Simulation, cells: &[CellIndex]) -> BTreeSet<CellIndex> {
    majority_region(sim, cells).map(|r| sim.regions.cells_of(r)).unwrap_or_default()
}

fn heading_index(sim: &Simulation, settings: &BankSettings) -> usize {
    let active: Vec<Vec2> = sim.swarm.robots.iter().filter(|r| r.is_active()).map(|r| r.velocity).collect();
    if active.is_empty() {
        return 4;
    }
    let mean = active.iter().fold(Vec2::ZERO, |a, v| a + *v) * (1.0 / active.len() as f64);
    if mean.norm() < settings.stationary_cells_per_s * sim.world.cell_size {
        return 4;
    }
    let angle = mean.y.atan2(mean.x).to_degrees();
    match angle {
        a if (-45.0..45.0).contains(&a) => 0,
        a if (45.0..135.0).contains(&a) => 1,
        a if (-135.0..-45.0).contains(&a) => 3,
        _ => 2,
    }
}

/// Memoizes forecasts per horizon so a pause forks once per distinct horizon.
pub struct TruthExtractor<'a> {
    sim: &'a Simulation,
    ctx: ExtractContext,
    settings: &'a BankSettings,
    forecasts: BTreeMap<u64, Forecast>,
    reach: Option<Forecast>,
}

impl<'a> TruthExtractor<'a> {
    pub fn new(sim: &'a Simulation, ctx: ExtractContext, settings: &'a BankSettings) -> Self {
        Self { sim, ctx, settings, forecasts: BTreeMap::new(), reach: None }
    }

    fn horizon(&mut self, horizon_s: f64) -> &Forecast {
        let ticks = (horizon_s / self.ctx.dt).round().max(1.0) as u64;
        let sim = self.sim;
        self.forecasts.entry(ticks).or_insert_with(|| forecast(sim, ticks, None))
    }

    pub fn extract(&mut self, q: &SagatQuery, horizon_s: f64) -> Truth {
        use Extractor::*;
        let sim = self.sim;
        let s = self.settings;
        let cs = sim.world.cell_size;
        let dt = self.ctx.dt;
        let number = match q.extractor {
            ActiveRobotCells => return Truth::Cells { cells: cells_of_positions(sim, active_positions(sim).into_iter()) },
            NearTargetCells => return Truth::Cells { cells: cells_of_positions(sim, near_target(sim, s).into_iter()) },
            HazardCells => return Truth::Cells { cells: sim.hazard.active_cells().clone() },
            MarkedCells => return Truth::Cells { cells: sim.marked.cells.clone() },
            DeactivatedCells => {
                let dead = sim.swarm.robots.iter().filter(|r| !r.is_active()).map(|r| r.position);
                return Truth::Cells { cells: cells_of_positions(sim, dead) };
            }
            TrappedCells => return Truth::Cells { cells: trapped_cells(sim).into_iter().collect() },
            DeactivatedRegionCells => {
                let dead: Vec<CellIndex> = sim
                    .swarm
                    .robots
                    .iter()
                    .filter(|r| !r.is_active())
                    .filter_map(|r| sim.world.cell_of(r.position).ok())
                    .collect();
                return Truth::Cells { cells: region_cells(sim, &dead) };
            }
            TrappedRegionCells => return Truth::Cells { cells: region_cells(sim, &trapped_cells(sim)) },
            TargetRegion => {
                let i = sim.regions.region_of(sim.world.target_cell()).index();
                return Truth::Choice { index: i, value: i as f64 };
            }
            MajorityActiveRegion => {
                let cells: Vec<CellIndex> = active_positions(sim).into_iter().filter_map(|p| sim.world.cell_of(p).ok()).collect();
                let i = majority_region(sim, &cells).unwrap_or(Region::ALL[0]).index();
                return Truth::Choice { index: i, value: i as f64 };
            }
            Heading => {
                let i = heading_index(sim, s);
                return Truth::Choice { index: i, value: i as f64 };
            }
            RemainingTime => self.ctx.task_ticks.saturating_sub(sim.tick) as f64 * dt,
            ElapsedTime => sim.tick as f64 * dt,
            CentroidDistance => sim.tp().map_or(f64::INFINITY, |tp| tp.ca / cs),
            NearestDistance => sim.tp().map_or(f64::INFINITY, |tp| tp.na / cs),
            NearTargetCount => near_target(sim, s).len() as f64,
            NearTargetPercent => near_percent(sim, s),
            MeanSpeed => {
                let v: Vec<f64> = sim.swarm.robots.iter().filter(|r| r.is_active()).map(|r| r.velocity.norm() / cs).collect();
                if v.is_empty() {
                    0.0
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            }
            OccupiedRegions => occupied_regions(sim) as f64,
            HazardCellCount => sim.hazard.active_cells().len() as f64,
            FutureNearTargetCount => near_target(&self.horizon(horizon_s).end, s).len() as f64,
            FutureOccupiedRegions => occupied_regions(&self.horizon(horizon_s).end) as f64,
            FutureNearTargetPercent => near_percent(&self.horizon(horizon_s).end, s),
            FutureNewHazardCells => self.horizon(horizon_s).new_hazard_cells.len() as f64,
            FutureDeactivations => self.horizon(horizon_s).deactivations as f64,
            FutureTrappedCount => self.horizon(horizon_s).end.swarm.trapped().len() as f64,
            FutureClearableMarks => {
                let end = &self.horizon(horizon_s).end;
                sim.marked.cells.iter().filter(|c| !end.hazard.is_hazardous(**c)).count() as f64
            }
            TimeToReachTarget => {
                let remaining = self.ctx.task_ticks.saturating_sub(sim.tick);
                let reach = s.reach_cells * cs;
                let f = self.reach.get_or_insert_with(|| forecast(sim, remaining, Some(reach)));
                f.reached_at.map_or(f64::INFINITY, |t| (t - sim.tick) as f64 * dt)
            }
        };
        let index = match &q.options {
            Some(McqOptions::Bins { edges, .. }) => bin_index(edges, number),
            _ => 0,
        };
        Truth::Choice { index, value: number }
    }
}

/// Convenience wrapper: extracts every query of a pause against one snapshot.
pub fn extract_truths(bank: &QueryBank, queries: &[&SagatQuery], sim: &Simulation, ctx: ExtractContext) -> Vec<Truth> {
    let mut ex = TruthExtractor::new(sim, ctx, &bank.settings);
    queries.iter().map(|q| ex.extract(q, bank.horizon_s(q))).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmqRubric {
    #[default]
    F1,
    ExactMatch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DontKnowPolicy {
    #[default]
    Zero,
    Exclude,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub cmq_rubric: CmqRubric,
    pub dont_know: DontKnowPolicy,
}

pub fn f1_score(marked: &BTreeSet<CellIndex>, truth: &BTreeSet<CellIndex>) -> f64 {
    let hit = marked.intersection(truth).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let p = hit / marked.len() as f64;
    let r = hit / truth.len() as f64;
    2.0 * p * r / (p + r)
}

/// Score in [0, 100], or `None` when the answer is excluded from means.
pub fn score_response(
    query: &SagatQuery,
    answer: &Answer,
    truth: &Truth,
    scoring: &ScoringConfig,
) -> Result<Option<f64>, SagatError> {
    let mismatch = || SagatError::AnswerMismatch(query.id.clone());
    if !answer.fits(query.kind) {
        return Err(mismatch());
    }
    let score = match (answer, truth) {
        (Answer::DontKnow, Truth::Choice { .. }) => match scoring.dont_know {
            DontKnowPolicy::Zero => 0.0,
            DontKnowPolicy::Exclude => return Ok(None),
        },
        (Answer::Choice { index }, Truth::Choice { index: correct, .. }) => {
            if *index >= 5 {
                return Err(SagatError::OptionOutOfRange { id: query.id.clone(), index: *index });
            }
            if index == correct {
                100.0
            } else {
                0.0
            }
        }
        (Answer::NotApplicable, Truth::Cells { cells }) => {
            if cells.is_empty() {
                100.0
            } else {
                0.0
            }
        }
        (Answer::Cells { cells: marked }, Truth::Cells { cells }) => {
            if cells.is_empty() || marked.is_empty() {
                0.0
            } else {
                match scoring.cmq_rubric {
                    CmqRubric::F1 => 100.0 * f1_score(marked, cells),
                    CmqRubric::ExactMatch => {
                        if marked == cells {
                            100.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        }
        _ => return Err(mismatch()),
    };
    Ok(Some(score))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub query_id: String,
    pub level: SaLevel,
    pub dimension: u8,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SagatReport {
    pub questions: Vec<QuestionScore>,
    pub levels: BTreeMap<SaLevel, f64>,
    /// Keyed "Dim1".."Dim6".
    pub dimensions: BTreeMap<String, f64>,
    pub overall: f64,
}

impl SagatReport {
    pub fn level(&self, level: SaLevel) -> Option<f64> {
        self.levels.get(&level).copied()
    }

    pub fn dimension(&self, dim: u8) -> Option<f64> {
        self.dimensions.get(&dimension_key(dim)).copied()
    }
}

pub fn dimension_key(dim: u8) -> String {
    format!("Dim{dim}")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn aggregate_sagat(questions: Vec<QuestionScore>) -> Result<SagatReport, SagatError> {
    let mut all = Vec::new();
    let mut by_level: BTreeMap<SaLevel, Vec<f64>> = BTreeMap::new();
    let mut by_dim: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for q in &questions {
        if let Some(s) = q.score {
            all.push(s);
            by_level.entry(q.level).or_default().push(s);
            by_dim.entry(dimension_key(q.dimension)).or_default().push(s);
        }
    }
    if all.is_empty() {
        return Err(SagatError::EmptyScores);
    }
    Ok(SagatReport {
        overall: mean(&all),
        levels: by_level.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
        dimensions: by_dim.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
        questions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PauseConfig {
    /// Fractions of the task duration; one pause per window, in order.
    pub windows: Vec<[f64; 2]>,
    pub min_gap_s: f64,
}

impl Default for PauseConfig {
    fn default() -> Self {
        Self { windows: vec![[0.30, 0.45], [0.65, 0.80]], min_gap_s: 20.0 }
    }
}

/// Draws one pause tick per window. Each draw is uniform over the part of
/// its window that keeps `min_gap_s` to the previous pause and to the end.
pub fn schedule_pauses(duration_s: f64, dt: f64, cfg: &PauseConfig, rng: &mut RngStream) -> Result<Vec<u64>, SagatError> {
    if cfg.windows.is_empty() {
        return Err(SagatError::InfeasibleSchedule("at least one pause window is required".into()));
    }
    let mut ticks = Vec::with_capacity(cfg.windows.len());
    let mut earliest = 0.0_f64;
    for (i, &[lo, hi]) in cfg.windows.iter().enumerate() {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(SagatError::InfeasibleSchedule(format!("window {} is not a sub-range of [0, 1]", i + 1)));
        }
        let a = (lo * duration_s).max(earliest);
        let b = (hi * duration_s).min(duration_s - cfg.min_gap_s);
        if a > b + 1e-9 {
            return Err(SagatError::InfeasibleSchedule(format!("window {} leaves no room for the gap rule", i + 1)));
        }
        let t = if b > a { rng.uniform(a, b) } else { a };
        let tick = ((t / dt).round() as u64).max(1);
        ticks.push(tick);
        earliest = tick as f64 * dt + cfg.min_gap_s;
    }
    Ok(ticks)
}

/// Answers correctly with probability `accuracy`, otherwise gives a wrong
/// answer of the right type.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedRespondent {
    pub accuracy: f64,
    rng: RngStream,
}

impl ScriptedRespondent {
    pub fn new(accuracy: f64, rng: RngStream) -> Self {
        Self { accuracy: accuracy.clamp(0.0, 1.0), rng }
    }

    /// `all_cells` feeds wrong cell-marking answers.
    pub fn answer(&self, pause: usize, index: usize, truth: &Truth, all_cells: &[CellIndex]) -> SagatResponse {
        let mut rng = self.rng.derive_u64(pause as u64).derive_u64(index as u64);
        let correct = rng.bernoulli(self.accuracy);
        let latency_ms = 2000 + rng.below(6000) as u64;
        let answer = match truth {
            Truth::Choice { index, .. } if correct => Answer::Choice { index: *index },
            Truth::Choice { index, .. } => Answer::Choice { index: (index + 1 + rng.below(4)) % 5 },
            Truth::Cells { cells } if correct => {
                if cells.is_empty() {
                    Answer::NotApplicable
                } else {
                    Answer::Cells { cells: cells.clone() }
                }
            }
            Truth::Cells { cells } => {
                let wrong: Vec<CellIndex> = all_cells.iter().filter(|c| !cells.contains(c)).copied().collect();
                match rng.choose(&wrong) {
                    Some(c) => Answer::Cells { cells: [*c].into() },
                    None => Answer::NotApplicable,
                }
            }
        };
        SagatResponse { query_id: String::new(), answer, latency_ms }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[(u32, u32)]) -> BTreeSet<CellIndex> {
        v.iter().map(|&(c, r)| CellIndex::new(c, r)).collect()
    }

    fn bank() -> QueryBank {
        QueryBank::default_bank()
    }

    #[test]
    fn default_bank_shape() {
        let b = bank();
        assert_eq!(b.queries.len(), 28);
        assert!(b.missing_tags().is_empty());
        assert_eq!(b.pause_count(), 2);
        for p in 1..=2 {
            let qs = b.for_pause(p);
            assert_eq!(qs.len(), 14);
            let count = |l| qs.iter().filter(|q| q.level == l).count();
            assert_eq!((count(SaLevel::L1), count(SaLevel::L2), count(SaLevel::L3)), (4, 6, 4));
        }
        for q in &b.queries {
            if q.kind == QueryKind::Mcq {
                assert_eq!(q.option_labels().len(), 5, "{}", q.id);
            }
            if q.level == SaLevel::L3 {
                assert!(b.horizon_s(q) > 0.0);
            }
        }
    }

    #[test]
    fn bank_rejects_bad_queries() {
        let bad_level = DEFAULT_BANK.replacen("level = \"L3\"", "level = \"L2\"", 1);
        assert!(matches!(QueryBank::from_toml(&bad_level), Err(SagatError::InvalidQuery { .. })));
        let dup = DEFAULT_BANK.replacen("id = \"p1-02\"", "id = \"p1-01\"", 1);
        assert_eq!(QueryBank::from_toml(&dup), Err(SagatError::DuplicateId("p1-01".into())));
        let edges = DEFAULT_BANK.replacen("edges = [60.0, 120.0", "edges = [120.0, 60.0", 1);
        assert!(QueryBank::from_toml(&edges).is_err());
    }

    #[test]
    fn bins() {
        let e = [1.0, 3.0, 6.0, 10.0];
        assert_eq!(bin_index(&e, 0.0), 0);
        assert_eq!(bin_index(&e, 1.0), 1);
        assert_eq!(bin_index(&e, 5.9), 2);
        assert_eq!(bin_index(&e, 10.0), 4);
        assert_eq!(bin_index(&e, f64::INFINITY), 4);
    }

    fn q(kind: &str) -> SagatQuery {
        bank().queries.into_iter().find(|q| q.id == kind).unwrap()
    }

    #[test]
    fn scoring_examples() {
        let sc = ScoringConfig::default();
        let mcq = q("p1-02");
        let truth = Truth::Choice { index: 1, value: 1.0 };
        assert_eq!(score_response(&mcq, &Answer::Choice { index: 1 }, &truth, &sc), Ok(Some(100.0)));
        assert_eq!(score_response(&mcq, &Answer::Choice { index: 2 }, &truth, &sc), Ok(Some(0.0)));
        assert_eq!(score_response(&mcq, &Answer::DontKnow, &truth, &sc), Ok(Some(0.0)));
        let excl = ScoringConfig { dont_know: DontKnowPolicy::Exclude, ..sc.clone() };
        assert_eq!(score_response(&mcq, &Answer::DontKnow, &truth, &excl), Ok(None));
        assert!(score_response(&mcq, &Answer::NotApplicable, &truth, &sc).is_err());
        assert!(score_response(&mcq, &Answer::Choice { index: 5 }, &truth, &sc).is_err());

        let cmq = q("p1-01");
        let t = Truth::Cells { cells: set(&[(1, 1), (2, 2)]) };
        let partial = Answer::Cells { cells: set(&[(0, 0), (1, 1)]) };
        assert_eq!(score_response(&cmq, &partial, &t, &sc), Ok(Some(50.0)));
        let exact = ScoringConfig { cmq_rubric: CmqRubric::ExactMatch, ..sc.clone() };
        assert_eq!(score_response(&cmq, &partial, &t, &exact), Ok(Some(0.0)));
        assert_eq!(score_response(&cmq, &Answer::NotApplicable, &t, &sc), Ok(Some(0.0)));
        assert_eq!(score_response(&cmq, &Answer::Cells { cells: BTreeSet::new() }, &t, &sc), Ok(Some(0.0)));
        let empty = Truth::Cells { cells: BTreeSet::new() };
        assert_eq!(score_response(&cmq, &Answer::NotApplicable, &empty, &sc), Ok(Some(100.0)));
        assert_eq!(score_response(&cmq, &partial, &empty, &sc), Ok(Some(0.0)));
        assert!(score_response(&cmq, &Answer::DontKnow, &t, &sc).is_err());
    }

    fn qs(level: SaLevel, dim: u8, score: f64) -> QuestionScore {
        QuestionScore { query_id: String::new(), level, dimension: dim, score: Some(score) }
    }

    #[test]
    fn aggregation_examples() {
        let r = aggregate_sagat(vec![qs(SaLevel::L1, 1, 100.0), qs(SaLevel::L1, 2, 0.0), qs(SaLevel::L2, 1, 50.0)]).unwrap();
        assert_eq!(r.level(SaLevel::L1), Some(50.0));
        assert_eq!(r.level(SaLevel::L2), Some(50.0));
        assert_eq!(r.level(SaLevel::L3), None);
        assert_eq!(r.overall, 50.0);
        assert_eq!(r.dimension(1), Some(75.0));
        let r = aggregate_sagat(vec![qs(SaLevel::L1, 1, 0.0), qs(SaLevel::L2, 1, 50.0), qs(SaLevel::L3, 1, 100.0)]).unwrap();
        assert_eq!(r.overall, 50.0);
        assert_eq!(aggregate_sagat(vec![]), Err(SagatError::EmptyScores));
        let excluded = QuestionScore { score: None, ..qs(SaLevel::L1, 1, 0.0) };
        assert_eq!(aggregate_sagat(vec![excluded]), Err(SagatError::EmptyScores));
    }

    #[test]
    fn pause_schedule_examples() {
        let cfg = PauseConfig::default();
        let a = schedule_pauses(300.0, 0.1, &cfg, &mut RngStream::named(5, "pauses")).unwrap();
        let b = schedule_pauses(300.0, 0.1, &cfg, &mut RngStream::named(5, "pauses")).unwrap();
        assert_eq!(a, b);
        assert!((900..=1350).contains(&a[0]) && (1950..=2400).contains(&a[1]), "{a:?}");
        let one = PauseConfig { windows: vec![[0.5, 0.5]], min_gap_s: 20.0 };
        assert_eq!(schedule_pauses(300.0, 0.1, &one, &mut RngStream::named(5, "p")).unwrap(), vec![1500]);
        let late = PauseConfig { windows: vec![[0.95, 1.0]], min_gap_s: 20.0 };
        assert!(schedule_pauses(300.0, 0.1, &late, &mut RngStream::named(5, "p")).is_err());
        let tight = PauseConfig { windows: vec![[0.5, 0.5], [0.52, 0.55]], min_gap_s: 20.0 };
        assert!(schedule_pauses(300.0, 0.1, &tight, &mut RngStream::named(5, "p")).is_err());
    }

    #[test]
    fn pause_gaps_hold_over_seeds() {
        let cfg = PauseConfig::default();
        for seed in 0..200 {
            let t = schedule_pauses(300.0, 0.1, &cfg, &mut RngStream::named(seed, "pauses")).unwrap();
            assert!(t[1] - t[0] >= 200);
            assert!(3000 - t[1] >= 200);
        }
    }

    #[test]
    fn respondent_extremes() {
        let cells: Vec<CellIndex> = (0..5).flat_map(|c| (0..5).map(move |r| CellIndex::new(c, r))).collect();
        let sc = ScoringConfig::default();
        let cmq = q("p1-01");
        let mcq = q("p1-02");
        let truths = [
            (&mcq, Truth::Choice { index: 3, value: 3.0 }),
            (&cmq, Truth::Cells { cells: set(&[(1, 1)]) }),
            (&cmq, Truth::Cells { cells: BTreeSet::new() }),
        ];
        let good = ScriptedRespondent::new(1.0, RngStream::named(1, "r"));
        let bad = ScriptedRespondent::new(0.0, RngStream::named(1, "r"));
        for (i, (query, truth)) in truths.iter().enumerate() {
            let g = good.answer(1, i, truth, &cells);
            assert_eq!(score_response(query, &g.answer, truth, &sc), Ok(Some(100.0)));
            let b = bad.answer(1, i, truth, &cells);
            assert_eq!(score_response(query, &b.answer, truth, &sc), Ok(Some(0.0)));
        }
    }
}
