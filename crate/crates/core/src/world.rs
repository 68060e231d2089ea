//! Grid world geometry: cells, static obstacles, the target and the
//! five labelled regions used by region questions.
//!
//! Coordinates are meters with the origin at the south-west corner; `x`
//! grows east with the column index and `y` grows north with the row index.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("grid dimensions must be at least 1x1 (got {width}x{height})")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("cell size must be positive and finite (got {0})")]
    InvalidCellSize(f64),
    #[error("position ({x}, {y}) lies outside the world bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("cell {0} is outside the grid")]
    InvalidCell(CellIndex),
    #[error("target lies inside static obstacle cell {0}")]
    TargetBlocked(CellIndex),
    #[error("region partition needs at least a 2x2 grid")]
    DegenerateGrid,
    #[error("no eligible target cell at least half a diagonal away from the spawn area")]
    NoTargetCandidate,
    #[error("obstacle fraction must be in [0, 1) (got {0})")]
    InvalidObstacleFraction(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Rescales to length `max` when longer than `max`.
    pub fn clamp_norm(self, max: f64) -> Vec2 {
        let n = self.norm();
        if n > max && n > 0.0 {
            self * (max / n)
        } else {
            self
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub col: u32,
    pub row: u32,
}

impl CellIndex {
    pub const fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

/// Neighborhood used by hazard motion and spreading.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    /// 4-neighborhood (von Neumann).
    #[default]
    VonNeumann,
    /// 8-neighborhood (Moore).
    Moore,
}

impl Neighborhood {
    pub fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Neighborhood::VonNeumann => &[(1, 0), (0, 1), (-1, 0), (0, -1)],
            Neighborhood::Moore => &[
                (1, 0),
                (1, 1),
                (0, 1),
                (-1, 1),
                (-1, 0),
                (-1, -1),
                (0, -1),
                (1, -1),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    NW,
    NE,
    SW,
    SE,
    Center,
}

impl Region {
    pub const ALL: [Region; 5] = [Region::NW, Region::NE, Region::SW, Region::SE, Region::Center];

    pub fn label(self) -> &'static str {
        match self {
            Region::NW => "NW",
            Region::NE => "NE",
            Region::SW => "SW",
            Region::SE => "SE",
            Region::Center => "Center",
        }
    }

    pub fn index(self) -> usize {
        Region::ALL.iter().position(|r| *r == self).unwrap()
    }
}

/// A labelled rectangle of cells, half-open on both axes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub region: Region,
    pub cols: (u32, u32),
    pub rows: (u32, u32),
}

impl RegionSpec {
    fn contains(&self, cell: CellIndex) -> bool {
        (self.cols.0..self.cols.1).contains(&cell.col) && (self.rows.0..self.rows.1).contains(&cell.row)
    }
}

/// The five regions and the resolved per-cell labelling (center wins over
/// quadrants).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMap {
    width: u32,
    pub specs: Vec<RegionSpec>,
    labels: Vec<Region>,
}

impl RegionMap {
    pub fn region_of(&self, cell: CellIndex) -> Region {
        self.labels[(cell.row * self.width + cell.col) as usize]
    }

    pub fn cells_of(&self, region: Region) -> BTreeSet<CellIndex> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == region)
            .map(|(i, _)| CellIndex::new(i as u32 % self.width, i as u32 / self.width))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    pub width: u32,
    pub height: u32,
    pub cell_size: f64,
    pub static_obstacles: BTreeSet<CellIndex>,
    pub target: Vec2,
}

impl GridWorld {
    pub fn new(
        width: u32,
        height: u32,
        cell_size: f64,
        static_obstacles: BTreeSet<CellIndex>,
        target: Vec2,
    ) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::InvalidDimensions { width, height });
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(WorldError::InvalidCellSize(cell_size));
        }
        let world = Self {
            width,
            height,
            cell_size,
            static_obstacles,
            target,
        };
        if let Some(bad) = world.static_obstacles.iter().find(|c| !world.is_valid(**c)) {
            return Err(WorldError::InvalidCell(*bad));
        }
        let target_cell = world.cell_of(target)?;
        if world.static_obstacles.contains(&target_cell) {
            return Err(WorldError::TargetBlocked(target_cell));
        }
        Ok(world)
    }

    pub fn max_x(&self) -> f64 {
        f64::from(self.width) * self.cell_size
    }

    pub fn max_y(&self) -> f64 {
        f64::from(self.height) * self.cell_size
    }

    pub fn diagonal(&self) -> f64 {
        self.max_x().hypot(self.max_y())
    }

    pub fn cell_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn in_bounds(&self, pos: Vec2) -> bool {
        pos.x >= 0.0 && pos.y >= 0.0 && pos.x <= self.max_x() && pos.y <= self.max_y()
    }

    pub fn is_valid(&self, cell: CellIndex) -> bool {
        cell.col < self.width && cell.row < self.height
    }

    /// Cell containing `pos`. Cells are half-open squares except along the
    /// max edges, which belong to the last row/column.
    pub fn cell_of(&self, pos: Vec2) -> Result<CellIndex, WorldError> {
        if !self.in_bounds(pos) {
            return Err(WorldError::OutOfBounds { x: pos.x, y: pos.y });
        }
        let col = ((pos.x / self.cell_size).floor() as u32).min(self.width - 1);
        let row = ((pos.y / self.cell_size).floor() as u32).min(self.height - 1);
        Ok(CellIndex { col, row })
    }

    pub fn cell_center(&self, cell: CellIndex) -> Vec2 {
        Vec2::new(
            (f64::from(cell.col) + 0.5) * self.cell_size,
            (f64::from(cell.row) + 0.5) * self.cell_size,
        )
    }

    pub fn target_cell(&self) -> CellIndex {
        self.cell_of(self.target).expect("target validated at construction")
    }

    pub fn is_blocked(&self, cell: CellIndex, marked: &BTreeSet<CellIndex>) -> bool {
        self.static_obstacles.contains(&cell) || marked.contains(&cell)
    }

    /// True when `pos` is in bounds and its cell is free.
    pub fn is_free_position(&self, pos: Vec2, marked: &BTreeSet<CellIndex>) -> bool {
        match self.cell_of(pos) {
            Ok(cell) => !self.is_blocked(cell, marked),
            Err(_) => false,
        }
    }

    pub fn neighbors(&self, cell: CellIndex, hood: Neighborhood) -> impl Iterator<Item = CellIndex> + '_ {
        hood.offsets().iter().filter_map(move |(dc, dr)| {
            let col = i64::from(cell.col) + dc;
            let row = i64::from(cell.row) + dr;
            (col >= 0 && row >= 0 && col < i64::from(self.width) && row < i64::from(self.height))
                .then(|| CellIndex::new(col as u32, row as u32))
        })
    }

    pub fn all_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.height).flat_map(move |row| (0..self.width).map(move |col| CellIndex::new(col, row)))
    }

    /// NW/NE/SW/SE quadrants plus a center block of
    /// `ceil(width/2) x ceil(height/2)` cells.
    pub fn quadrant_regions(&self) -> Result<RegionMap, WorldError> {
        if self.width < 2 || self.height < 2 {
            return Err(WorldError::DegenerateGrid);
        }
        let (w, h) = (self.width, self.height);
        let (half_w, half_h) = (w / 2, h / 2);
        let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
        let (c0, r0) = ((w - cw) / 2, (h - ch) / 2);
        let specs = vec![
            RegionSpec { region: Region::NW, cols: (0, half_w), rows: (half_h, h) },
            RegionSpec { region: Region::NE, cols: (half_w, w), rows: (half_h, h) },
            RegionSpec { region: Region::SW, cols: (0, half_w), rows: (0, half_h) },
            RegionSpec { region: Region::SE, cols: (half_w, w), rows: (0, half_h) },
            RegionSpec { region: Region::Center, cols: (c0, c0 + cw), rows: (r0, r0 + ch) },
        ];
        let labels = self
            .all_cells()
            .map(|cell| {
                if specs[4].contains(cell) {
                    Region::Center
                } else {
                    specs[..4]
                        .iter()
                        .find(|s| s.contains(cell))
                        .map(|s| s.region)
                        .expect("quadrants cover the grid")
                }
            })
            .collect();
        Ok(RegionMap { width: w, specs, labels })
    }
}

/// World section of the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub width: u32,
    pub height: u32,
    pub cell_size: f64,
    pub obstacle_fraction: f64,
    /// Side length, in cells, of the square spawn area at the south-west corner.
    pub spawn_cells: u32,
    /// Explicit target position in meters; sampled when absent.
    pub target: Option<[f64; 2]>,
    /// Explicit obstacle cells; sampled when absent.
    pub obstacles: Option<Vec<CellIndex>>,
    /// Pins the layout independently of the session seed.
    pub layout_seed: Option<u64>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 20,
            height: 20,
            cell_size: 1.0,
            obstacle_fraction: 0.06,
            spawn_cells: 4,
            target: None,
            obstacles: None,
            layout_seed: None,
        }
    }
}

impl WorldConfig {
    pub fn spawn_cells_set(&self) -> BTreeSet<CellIndex> {
        let side = self.spawn_cells.min(self.width).min(self.height);
        (0..side).flat_map(|r| (0..side).map(move |c| CellIndex::new(c, r))).collect()
    }

    pub fn spawn_centroid(&self) -> Vec2 {
        let side = f64::from(self.spawn_cells.min(self.width).min(self.height));
        Vec2::new(side * self.cell_size / 2.0, side * self.cell_size / 2.0)
    }

    /// Builds the world. Sampling draws from `rng`, which callers derive from
    /// the layout seed when present.
    pub fn build(&self, rng: &mut RngStream) -> Result<GridWorld, WorldError> {
        if self.width == 0 || self.height == 0 {
            return Err(WorldError::InvalidDimensions { width: self.width, height: self.height });
        }
        if !(0.0..1.0).contains(&self.obstacle_fraction) {
            return Err(WorldError::InvalidObstacleFraction(self.obstacle_fraction));
        }
        let probe = GridWorld {
            width: self.width,
            height: self.height,
            cell_size: self.cell_size,
            static_obstacles: BTreeSet::new(),
            target: Vec2::ZERO,
        };
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(WorldError::InvalidCellSize(self.cell_size));
        }
        let spawn = self.spawn_cells_set();
        let explicit_obstacles: Option<BTreeSet<CellIndex>> =
            self.obstacles.as_ref().map(|v| v.iter().copied().collect());

        let target = match self.target {
            Some([x, y]) => Vec2::new(x, y),
            None => {
                let centroid = self.spawn_centroid();
                let min_dist = probe.diagonal() / 2.0;
                let candidates: Vec<CellIndex> = probe
                    .all_cells()
                    .filter(|c| !spawn.contains(c))
                    .filter(|c| explicit_obstacles.as_ref().is_none_or(|o| !o.contains(c)))
                    .filter(|c| probe.cell_center(*c).distance(centroid) >= min_dist)
                    .collect();
                let cell = rng.choose(&candidates).ok_or(WorldError::NoTargetCandidate)?;
                probe.cell_center(*cell)
            }
        };
        let target_cell = probe.cell_of(target)?;

        let obstacles = match explicit_obstacles {
            Some(o) => o,
            None => {
                let mut eligible: Vec<CellIndex> = probe
                    .all_cells()
                    .filter(|c| !spawn.contains(c) && *c != target_cell)
                    .collect();
                let count = ((self.obstacle_fraction * probe.cell_count() as f64).round() as usize)
                    .min(eligible.len());
                rng.shuffle(&mut eligible);
                eligible.into_iter().take(count).collect()
            }
        };
        GridWorld::new(self.width, self.height, self.cell_size, obstacles, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world(w: u32, h: u32) -> GridWorld {
        GridWorld::new(w, h, 1.0, BTreeSet::new(), Vec2::new(0.5, 0.5)).unwrap()
    }

    #[test]
    fn cell_of_examples() {
        let w = open_world(20, 20);
        assert_eq!(w.cell_of(Vec2::new(0.0, 0.0)).unwrap(), CellIndex::new(0, 0));
        assert_eq!(w.cell_of(Vec2::new(2.5, 0.1)).unwrap(), CellIndex::new(2, 0));
        assert_eq!(w.cell_of(Vec2::new(20.0, 20.0)).unwrap(), CellIndex::new(19, 19));
        assert!(matches!(w.cell_of(Vec2::new(-0.1, 3.0)), Err(WorldError::OutOfBounds { .. })));
        assert!(w.cell_of(Vec2::new(3.0, 20.01)).is_err());
    }

    #[test]
    fn cell_of_respects_cell_size() {
        let w = GridWorld::new(4, 4, 2.5, BTreeSet::new(), Vec2::new(1.0, 1.0)).unwrap();
        assert_eq!(w.cell_of(Vec2::new(2.5, 4.99)).unwrap(), CellIndex::new(1, 1));
        assert_eq!(w.cell_of(Vec2::new(10.0, 0.0)).unwrap(), CellIndex::new(3, 0));
    }

    #[test]
    fn is_blocked_cases() {
        let obstacles: BTreeSet<_> = [CellIndex::new(1, 1)].into();
        let w = GridWorld::new(5, 5, 1.0, obstacles, Vec2::new(4.5, 4.5)).unwrap();
        let none = BTreeSet::new();
        let marked: BTreeSet<_> = [CellIndex::new(2, 2)].into();
        assert!(w.is_blocked(CellIndex::new(1, 1), &none));
        assert!(w.is_blocked(CellIndex::new(2, 2), &marked));
        assert!(!w.is_blocked(CellIndex::new(3, 3), &marked));
    }

    #[test]
    fn construction_invariants() {
        assert!(matches!(
            GridWorld::new(0, 3, 1.0, BTreeSet::new(), Vec2::ZERO),
            Err(WorldError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            GridWorld::new(3, 3, 0.0, BTreeSet::new(), Vec2::ZERO),
            Err(WorldError::InvalidCellSize(_))
        ));
        let blocked: BTreeSet<_> = [CellIndex::new(0, 0)].into();
        assert!(matches!(
            GridWorld::new(3, 3, 1.0, blocked, Vec2::new(0.2, 0.2)),
            Err(WorldError::TargetBlocked(_))
        ));
        let outside: BTreeSet<_> = [CellIndex::new(3, 0)].into();
        assert!(matches!(
            GridWorld::new(3, 3, 1.0, outside, Vec2::new(2.2, 2.2)),
            Err(WorldError::InvalidCell(_))
        ));
        assert!(GridWorld::new(3, 3, 1.0, BTreeSet::new(), Vec2::new(3.5, 1.0)).is_err());
    }

    #[test]
    fn cell_center_round_trips() {
        let w = GridWorld::new(7, 5, 0.5, BTreeSet::new(), Vec2::new(0.1, 0.1)).unwrap();
        for c in w.all_cells() {
            assert_eq!(w.cell_of(w.cell_center(c)).unwrap(), c);
        }
    }

    /// Brute-force labelling from the rectangle definitions, independent of
    /// the resolved map.
    fn brute_force_labels(w: u32, h: u32) -> Vec<(CellIndex, Region)> {
        let cw = w.div_ceil(2);
        let ch = h.div_ceil(2);
        let (c0, r0) = ((w - cw) / 2, (h - ch) / 2);
        let mut out = Vec::new();
        for row in 0..h {
            for col in 0..w {
                let in_center = col >= c0 && col < c0 + cw && row >= r0 && row < r0 + ch;
                let label = if in_center {
                    Region::Center
                } else {
                    match (col < w / 2, row < h / 2) {
                        (true, false) => Region::NW,
                        (false, false) => Region::NE,
                        (true, true) => Region::SW,
                        (false, true) => Region::SE,
                    }
                };
                out.push((CellIndex::new(col, row), label));
            }
        }
        out
    }

    #[test]
    fn regions_20x20() {
        let w = open_world(20, 20);
        let map = w.quadrant_regions().unwrap();
        assert_eq!(map.specs.len(), 5);
        let center = map.cells_of(Region::Center);
        assert_eq!(center.len(), 100);
        assert!(center.iter().all(|c| (5..=14).contains(&c.col) && (5..=14).contains(&c.row)));
        for (cell, label) in brute_force_labels(20, 20) {
            assert_eq!(map.region_of(cell), label, "{cell}");
        }
        let total: usize = Region::ALL.iter().map(|r| map.cells_of(*r).len()).sum();
        assert_eq!(total, 400);
    }

    #[test]
    fn regions_2x2_and_odd() {
        for (w, h) in [(2, 2), (3, 5), (7, 4), (2, 9)] {
            let world = open_world(w, h);
            let map = world.quadrant_regions().unwrap();
            let mut seen = BTreeSet::new();
            for r in Region::ALL {
                for c in map.cells_of(r) {
                    assert!(seen.insert(c), "cell {c} labelled twice");
                }
            }
            assert_eq!(seen.len(), (w * h) as usize);
            for (cell, label) in brute_force_labels(w, h) {
                assert_eq!(map.region_of(cell), label);
            }
        }
        let map = open_world(2, 2).quadrant_regions().unwrap();
        assert_eq!(map.cells_of(Region::Center).len(), 1);
    }

    #[test]
    fn regions_reject_degenerate_grid() {
        assert_eq!(open_world(1, 1).quadrant_regions(), Err(WorldError::DegenerateGrid));
        assert_eq!(open_world(1, 5).quadrant_regions(), Err(WorldError::DegenerateGrid));
    }

    #[test]
    fn default_build_respects_placement_rules() {
        let cfg = WorldConfig::default();
        for seed in 0..50 {
            let mut rng = RngStream::named(seed, "world");
            let w = cfg.build(&mut rng).unwrap();
            assert_eq!(w.static_obstacles.len(), 24);
            let spawn = cfg.spawn_cells_set();
            assert!(w.static_obstacles.iter().all(|c| !spawn.contains(c)));
            assert!(!w.static_obstacles.contains(&w.target_cell()));
            assert!(w.target.distance(cfg.spawn_centroid()) >= w.diagonal() / 2.0);
        }
    }

    #[test]
    fn build_is_seed_deterministic() {
        let cfg = WorldConfig::default();
        let a = cfg.build(&mut RngStream::named(5, "world")).unwrap();
        let b = cfg.build(&mut RngStream::named(5, "world")).unwrap();
        let c = cfg.build(&mut RngStream::named(6, "world")).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
