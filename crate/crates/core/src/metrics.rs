//! Task-performance metrics over Active robots.
//!
//! * `CA`: distance from the centroid of Active robots to the target.
//! * `NA`: distance from the nearest Active robot to the target.
//! * `NAQ1` / `NAQ2`: by default the mean distance of the nearest
//!   `ceil(n/4)` / `ceil(n/2)` Active robots. `QuartileBoundary` mode instead
//!   reports the distance of the `ceil(n/4)`-th / `ceil(n/2)`-th nearest robot.
//!
//! Lower is better for all four.

use serde::{Deserialize, Serialize};

use crate::swarm::{trapped_robots, RobotState};
use crate::world::{GridWorld, Vec2};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaqMode {
    #[default]
    PrefixMean,
    QuartileBoundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpValues {
    pub ca: f64,
    pub na: f64,
    pub naq1: f64,
    pub naq2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub tick: u64,
    /// `None` when every robot is deactivated.
    pub tp: Option<TpValues>,
    pub active_count: usize,
    pub deactivated_count: usize,
    pub trapped_count: usize,
}

impl MetricSample {
    pub fn all_deactivated(&self) -> bool {
        self.tp.is_none()
    }
}

/// Metrics section of the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Emit a sample every this many ticks.
    pub sample_every: u64,
    pub naq_mode: NaqMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { sample_every: 10, naq_mode: NaqMode::PrefixMean }
    }
}

/// Distances of Active robots to the target, plus CA.
pub fn tp_values(positions: &[Vec2], target: Vec2, mode: NaqMode) -> Option<TpValues> {
    if positions.is_empty() {
        return None;
    }
    let n = positions.len();
    let centroid = positions.iter().fold(Vec2::ZERO, |acc, p| acc + *p) * (1.0 / n as f64);
    let mut d: Vec<f64> = positions.iter().map(|p| p.distance(target)).collect();
    d.sort_by(f64::total_cmp);
    let q1 = n.div_ceil(4);
    let q2 = n.div_ceil(2);
    let (naq1, naq2) = match mode {
        NaqMode::PrefixMean => (prefix_mean(&d, q1), prefix_mean(&d, q2)),
        NaqMode::QuartileBoundary => (d[q1 - 1], d[q2 - 1]),
    };
    Some(TpValues { ca: centroid.distance(target), na: d[0], naq1, naq2 })
}

fn prefix_mean(sorted: &[f64], k: usize) -> f64 {
    sorted[..k].iter().sum::<f64>() / k as f64
}

pub fn compute_metrics(robots: &[RobotState], world: &GridWorld, tick: u64, mode: NaqMode, trapped: (usize, f64)) -> MetricSample {
    let active: Vec<Vec2> = robots.iter().filter(|r| r.is_active()).map(|r| r.position).collect();
    MetricSample {
        tick,
        tp: tp_values(&active, world.target, mode),
        active_count: active.len(),
        deactivated_count: robots.len() - active.len(),
        trapped_count: trapped_robots(robots, trapped.0, trapped.1).len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swarm::RobotStatus;

    fn pts(v: &[(f64, f64)]) -> Vec<Vec2> {
        v.iter().map(|&(x, y)| Vec2::new(x, y)).collect()
    }

    #[test]
    fn four_on_a_line() {
        // distances {1,2,3,4}; prefixes of 1 and 2; centroid (2.5, 0)
        let tp = tp_values(&pts(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]), Vec2::ZERO, NaqMode::PrefixMean).unwrap();
        assert_eq!(tp, TpValues { ca: 2.5, na: 1.0, naq1: 1.0, naq2: 1.5 });
        let qb = tp_values(&pts(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]), Vec2::ZERO, NaqMode::QuartileBoundary).unwrap();
        assert_eq!((qb.naq1, qb.naq2), (1.0, 2.0));
    }

    #[test]
    fn symmetric_pair_and_single() {
        let tp = tp_values(&pts(&[(0.0, 0.0), (2.0, 0.0)]), Vec2::new(1.0, 0.0), NaqMode::PrefixMean).unwrap();
        assert_eq!(tp.ca, 0.0);
        assert_eq!(tp.na, 1.0);
        let one = tp_values(&pts(&[(3.0, 4.0)]), Vec2::ZERO, NaqMode::PrefixMean).unwrap();
        assert_eq!(one, TpValues { ca: 5.0, na: 5.0, naq1: 5.0, naq2: 5.0 });
    }

    #[test]
    fn all_deactivated_is_flagged() {
        let world = GridWorld::new(4, 4, 1.0, Default::default(), Vec2::new(0.5, 0.5)).unwrap();
        let mut r = RobotState::new(0, Vec2::new(2.0, 2.0), 0.0);
        r.status = RobotStatus::Deactivated;
        let s = compute_metrics(&[r], &world, 9, NaqMode::PrefixMean, (10, 0.25));
        assert!(s.all_deactivated());
        assert_eq!((s.active_count, s.deactivated_count), (0, 1));
    }

    #[test]
    fn deactivated_robots_only_change_counts() {
        let world = GridWorld::new(10, 10, 1.0, Default::default(), Vec2::new(0.5, 0.5)).unwrap();
        let robots = vec![RobotState::new(0, Vec2::new(2.0, 2.0), 0.0), RobotState::new(1, Vec2::new(5.0, 1.0), 0.0)];
        let base = compute_metrics(&robots, &world, 1, NaqMode::PrefixMean, (10, 0.25));
        let mut more = robots.clone();
        let mut dead = RobotState::new(2, Vec2::new(9.0, 9.0), 0.0);
        dead.status = RobotStatus::Deactivated;
        more.push(dead);
        let with_dead = compute_metrics(&more, &world, 1, NaqMode::PrefixMean, (10, 0.25));
        assert_eq!(base.tp, with_dead.tp);
        assert_eq!(with_dead.deactivated_count, 1);
    }
}
