use std::collections::{BTreeMap, BTreeSet};

use hsi_core::hazard::{HazardField, HazardKind};
use hsi_core::intervention::{swipe_impulses, ActionKind, SwipeParams};
use hsi_core::metrics::{compute_metrics, tp_values, NaqMode};
use hsi_core::rng::RngStream;
use hsi_core::sart::score_sart;
use hsi_core::session::{SessionConfig, SessionSetup};
use hsi_core::swarm::{fitness, RobotState, RobotStatus};
use hsi_core::world::{CellIndex, Region, Vec2, WorldConfig};
use proptest::prelude::*;

fn setup(kind: HazardKind, seed: u64) -> SessionSetup {
    SessionConfig { seed, hazard_kind: kind, ..Default::default() }.prepare().unwrap()
}

fn field(s: &SessionSetup) -> HazardField {
    HazardField::new(s.config.hazard_kind, s.hazard_params.clone(), RngStream::named(s.config.seed, "hazard"), s.hazard_exclusion())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cell_centers_round_trip_and_regions_partition(seed in any::<u64>(), w in 2u32..40, h in 2u32..40) {
        let wc = WorldConfig { width: w, height: h, spawn_cells: 1, ..Default::default() };
        let Ok(world) = wc.build(&mut RngStream::named(seed, "world")) else { return Ok(()) };
        let regions = world.quadrant_regions().unwrap();
        let mut total = 0;
        for r in Region::ALL {
            total += regions.cells_of(r).len();
        }
        prop_assert_eq!(total, (w * h) as usize);
        for c in world.all_cells() {
            prop_assert_eq!(world.cell_of(world.cell_center(c)).unwrap(), c);
        }
    }

    #[test]
    fn spr_grows_monotonically_and_avoids_obstacles(seed in any::<u64>()) {
        let s = setup(HazardKind::Spr, seed);
        let mut f = field(&s);
        let mut prev = BTreeSet::new();
        for t in 0..3000 {
            f.step(t, &s.world);
            prop_assert!(prev.is_subset(f.active_cells()));
            prop_assert!(f.active_cells().is_disjoint(&s.world.static_obstacles));
            prev = f.active_cells().clone();
        }
    }

    #[test]
    fn mov_footprint_size_is_constant(seed in any::<u64>()) {
        let s = setup(HazardKind::Mov, seed);
        let mut f = field(&s);
        f.step(0, &s.world);
        let n = f.active_cells().len();
        prop_assert_eq!(n, s.hazard_params.mov_footprint_size);
        for t in 1..3000 {
            f.step(t, &s.world);
            prop_assert_eq!(f.active_cells().len(), n);
            prop_assert!(f.active_cells().is_disjoint(&s.world.static_obstacles));
        }
    }

    #[test]
    fn dis_cells_expire_exactly_at_duration(seed in any::<u64>()) {
        let s = setup(HazardKind::Dis, seed);
        let dur = s.hazard_params.dis_duration_ticks.unwrap();
        let mut f = field(&s);
        let mut expiry: BTreeMap<CellIndex, u64> = BTreeMap::new();
        for t in 0..3000 {
            let step = f.step(t, &s.world);
            for e in &step.events {
                for c in &e.activated {
                    expiry.insert(*c, t + dur);
                }
            }
            for (c, until) in &expiry {
                prop_assert_eq!(f.active_cells().contains(c), t < *until, "cell {} at tick {}", c, t);
            }
            prop_assert!(f.active_cells().is_disjoint(&s.world.static_obstacles));
        }
    }

    #[test]
    fn hazard_fields_are_reproducible(seed in any::<u64>(), k in 0usize..3) {
        let s = setup(HazardKind::STUDY[k], seed);
        let (mut a, mut b) = (field(&s), field(&s));
        for t in 0..1500 {
            prop_assert_eq!(a.step(t, &s.world), b.step(t, &s.world));
            prop_assert_eq!(a.active_cells(), b.active_cells());
        }
    }

    #[test]
    fn swarm_invariants_hold_under_hazards(seed in any::<u64>(), k in 0usize..3) {
        let s = setup(HazardKind::STUDY[k], seed);
        let (mut sim, _) = s.start().unwrap();
        let mut pbest: Vec<f64> = sim.swarm.robots.iter().map(|r| r.pbest_fitness).collect();
        let mut dead: BTreeSet<u32> = BTreeSet::new();
        for _ in 0..1500 {
            let out = sim.step(Vec::new());
            for (r, p) in sim.swarm.robots.iter().zip(pbest.iter_mut()) {
                prop_assert!(r.pbest_fitness >= *p);
                *p = r.pbest_fitness;
                if r.is_active() {
                    prop_assert!(sim.world.in_bounds(r.position));
                    let c = sim.world.cell_of(r.position).unwrap();
                    prop_assert!(!sim.world.static_obstacles.contains(&c));
                    prop_assert!(!sim.hazard.is_hazardous(c));
                    prop_assert!(!dead.contains(&r.id));
                } else {
                    dead.insert(r.id);
                }
            }
            for id in out.deactivated {
                prop_assert!(dead.contains(&id));
            }
            prop_assert_eq!(sim.swarm.deactivated_count(), dead.len());
        }
    }

    #[test]
    fn operator_actions_leave_hazards_and_target_alone(seed in any::<u64>(), k in 0usize..3, picks in prop::collection::vec((0u32..20, 0u32..20, 0u64..40), 1..30)) {
        let s = setup(HazardKind::STUDY[k], seed);
        let (mut passive, _) = s.start().unwrap();
        let (mut active, _) = s.start().unwrap();
        let mut rng = RngStream::named(seed, "actions");
        for t in 1..400u64 {
            let mut acts = Vec::new();
            for (c, r, when) in &picks {
                if t % 40 == *when {
                    let cell = CellIndex::new(*c, *r);
                    acts.push(if rng.bernoulli(0.7) { ActionKind::Mark { cell } } else { ActionKind::Unmark { cell } });
                    let origin = active.world.cell_center(cell);
                    let a = rng.uniform(0.0, std::f64::consts::TAU);
                    acts.push(ActionKind::Swipe { origin, direction: Vec2::new(a.cos(), a.sin()), magnitude: 1.0 });
                }
            }
            let acts = acts.into_iter().map(|kind| hsi_core::intervention::OperatorAction { tick: t, kind }).collect();
            active.step(acts);
            passive.step(Vec::new());
            prop_assert_eq!(active.hazard.active_cells(), passive.hazard.active_cells());
            prop_assert_eq!(active.world.target, passive.world.target);
        }
    }

    #[test]
    fn swipe_impulse_non_increasing_with_distance(d1 in 0.0f64..5.0, d2 in 0.0f64..5.0, mag in 0.0f64..=1.0, radius in 0.5f64..6.0, k in 0.1f64..10.0) {
        let robots = vec![
            RobotState::new(0, Vec2::new(10.0 + d1.min(d2), 10.0), 0.0),
            RobotState::new(1, Vec2::new(10.0, 10.0 + d1.max(d2)), 0.0),
        ];
        let imp = swipe_impulses(Vec2::new(10.0, 10.0), Vec2::new(0.0, 1.0), mag, &robots, &SwipeParams { radius, k_impulse: k });
        let near = imp.get(&0).map_or(0.0, |v| v.norm());
        let far = imp.get(&1).map_or(0.0, |v| v.norm());
        prop_assert!(far <= near + 1e-12);
        prop_assert!(near <= k * mag + 1e-12);
    }

    #[test]
    fn fitness_matches_closed_form(p in 0.1f64..1000.0, d in 0.0f64..50.0, d_min in 0.01f64..2.0, a in 0.0f64..std::f64::consts::TAU) {
        let s = setup(HazardKind::Off, 1);
        let pos = s.world.target + Vec2::new(d * a.cos(), d * a.sin());
        let eff = pos.distance(s.world.target).max(d_min);
        let got = fitness(pos, &s.world, p, d_min);
        prop_assert!((got - p / (eff * eff)).abs() <= 1e-12 * got.max(1.0));
    }
}

fn brute_metrics(pos: &[Vec2], target: Vec2) -> (f64, f64, f64, f64) {
    let n = pos.len();
    let cx = pos.iter().map(|p| p.x).sum::<f64>() / n as f64;
    let cy = pos.iter().map(|p| p.y).sum::<f64>() / n as f64;
    let mut d: Vec<f64> = pos.iter().map(|p| ((p.x - target.x).powi(2) + (p.y - target.y).powi(2)).sqrt()).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k1 = n.div_ceil(4);
    let k2 = n.div_ceil(2);
    let ca = ((cx - target.x).powi(2) + (cy - target.y).powi(2)).sqrt();
    (ca, d[0], d[..k1].iter().sum::<f64>() / k1 as f64, d[..k2].iter().sum::<f64>() / k2 as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn metrics_match_brute_force(pts in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 1..40), tx in 0.0f64..20.0, ty in 0.0f64..20.0) {
        let pos: Vec<Vec2> = pts.iter().map(|(x, y)| Vec2::new(*x, *y)).collect();
        let target = Vec2::new(tx, ty);
        let tp = tp_values(&pos, target, NaqMode::PrefixMean).unwrap();
        let (ca, na, q1, q2) = brute_metrics(&pos, target);
        prop_assert!((tp.ca - ca).abs() < 1e-9);
        prop_assert!((tp.na - na).abs() < 1e-9);
        prop_assert!((tp.naq1 - q1).abs() < 1e-9);
        prop_assert!((tp.naq2 - q2).abs() < 1e-9);
        prop_assert!(tp.na <= tp.naq1 && tp.naq1 <= tp.naq2);
        let max = pos.iter().map(|p| p.distance(target)).fold(0.0, f64::max);
        prop_assert!(tp.ca <= max + 1e-9);
    }

    #[test]
    fn metrics_ignore_ids_and_dead_robots(pts in prop::collection::vec((0.5f64..19.5, 0.5f64..19.5), 1..25), rot in 0usize..25, dx in 0.5f64..19.5, dy in 0.5f64..19.5) {
        let s = setup(HazardKind::Off, 2);
        let robots: Vec<RobotState> = pts.iter().enumerate().map(|(i, (x, y))| RobotState::new(i as u32, Vec2::new(*x, *y), 0.0)).collect();
        let base = compute_metrics(&robots, &s.world, 0, NaqMode::PrefixMean, (20, 0.05));

        let mut permuted = robots.clone();
        let n = permuted.len();
        permuted.rotate_left(rot % n);
        for (i, r) in permuted.iter_mut().enumerate() {
            r.id = (i as u32 * 7 + 3) % 101;
        }
        let p = compute_metrics(&permuted, &s.world, 0, NaqMode::PrefixMean, (20, 0.05));
        let (a, b) = (base.tp.unwrap(), p.tp.unwrap());
        prop_assert!((a.ca - b.ca).abs() < 1e-9 && (a.na - b.na).abs() < 1e-12);
        prop_assert!((a.naq1 - b.naq1).abs() < 1e-9 && (a.naq2 - b.naq2).abs() < 1e-9);

        let mut with_dead = robots.clone();
        let mut dead = RobotState::new(999, Vec2::new(dx, dy), 0.0);
        dead.status = RobotStatus::Deactivated;
        with_dead.push(dead);
        let m = compute_metrics(&with_dead, &s.world, 0, NaqMode::PrefixMean, (20, 0.05));
        prop_assert_eq!(m.tp, base.tp);
        prop_assert_eq!(m.active_count, base.active_count);
        prop_assert_eq!(m.deactivated_count, base.deactivated_count + 1);
    }

    #[test]
    fn sart_total_moves_by_one_per_item(ratings in prop::collection::vec(1i64..=7, 10), item in 0usize..10) {
        let base = score_sart(&ratings).unwrap();
        if ratings[item] < 7 {
            let mut up = ratings.clone();
            up[item] += 1;
            let bumped = score_sart(&up).unwrap();
            let expected = if item < 3 { -1 } else { 1 };
            prop_assert_eq!(i64::from(bumped.total) - i64::from(base.total), expected);
        }
        prop_assert_eq!(base.total, base.u - (base.d - base.s));
    }
}
