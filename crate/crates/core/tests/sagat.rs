use std::collections::BTreeSet;

use hsi_core::hazard::HazardKind;
use hsi_core::sagat::{
    aggregate_sagat, extract_truths, score_response, Answer, ExtractContext, Extractor, QueryBank, QuestionScore, SaLevel,
    ScoringConfig, Truth, REQUIREMENT_TAGS,
};
use hsi_core::session::SessionConfig;
use hsi_core::sim::Simulation;
use hsi_core::world::Region;
use proptest::prelude::*;

fn session(kind: HazardKind, seed: u64, target: Option<[f64; 2]>) -> (Simulation, ExtractContext, QueryBank) {
    let mut cfg = SessionConfig { seed, hazard_kind: kind, ..Default::default() };
    cfg.world.target = target;
    let setup = cfg.prepare().unwrap();
    let (sim, _) = setup.start().unwrap();
    (sim, ExtractContext { dt: setup.dt, task_ticks: setup.total_ticks }, setup.bank)
}

fn query_with(bank: &QueryBank, e: Extractor) -> &hsi_core::sagat::SagatQuery {
    bank.queries.iter().find(|q| q.extractor == e).expect("bank has extractor")
}

#[test]
fn target_in_north_east_gives_ne_option() {
    let (sim, ctx, bank) = session(HazardKind::Dis, 4, Some([17.5, 17.5]));
    let q = query_with(&bank, Extractor::TargetRegion);
    let truth = extract_truths(&bank, &[q], &sim, ctx).remove(0);
    let Truth::Choice { index, .. } = truth else { panic!("choice expected") };
    assert_eq!(Region::ALL[index].label(), "NE");
}

#[test]
fn no_deactivations_means_empty_truth_and_not_applicable_scores_full() {
    let (sim, ctx, bank) = session(HazardKind::Dis, 5, None);
    assert_eq!(sim.deactivated_ids().len(), 0);
    let q = query_with(&bank, Extractor::DeactivatedCells);
    let truth = extract_truths(&bank, &[q], &sim, ctx).remove(0);
    assert_eq!(truth, Truth::Cells { cells: BTreeSet::new() });
    let s = ScoringConfig::default();
    assert_eq!(score_response(q, &Answer::NotApplicable, &truth, &s).unwrap(), Some(100.0));
}

#[test]
fn l3_deactivation_count_matches_independent_run() {
    for seed in [1, 2, 3, 4] {
        let (mut sim, ctx, bank) = session(HazardKind::Spr, seed, None);
        for _ in 0..1200 {
            sim.step(Vec::new());
        }
        let before = sim.state_hash();
        let q = query_with(&bank, Extractor::FutureDeactivations);
        let truth = extract_truths(&bank, &[q], &sim, ctx).remove(0);
        assert_eq!(sim.state_hash(), before, "fork must not touch the live sim");

        let mut copy = sim.clone();
        let ticks = (bank.horizon_s(q) / ctx.dt).round() as u64;
        let observed: usize = (0..ticks).map(|_| copy.step(Vec::new()).deactivated.len()).sum();
        assert_eq!(extract_truths(&bank, &[q], &sim, ctx).remove(0), truth);
        let Truth::Choice { value, .. } = truth else { panic!("choice expected") };
        assert_eq!(value, observed as f64, "seed {seed}");
    }
}

#[test]
fn every_truth_fits_its_query() {
    let (mut sim, ctx, bank) = session(HazardKind::Mov, 9, None);
    for _ in 0..900 {
        sim.step(Vec::new());
    }
    let qs: Vec<_> = bank.queries.iter().collect();
    let truths = extract_truths(&bank, &qs, &sim, ctx);
    let again = extract_truths(&bank, &qs, &sim, ctx);
    assert_eq!(truths, again);
    let s = ScoringConfig::default();
    for (q, t) in qs.iter().zip(&truths) {
        let answer = match t {
            Truth::Choice { index, .. } => Answer::Choice { index: *index },
            Truth::Cells { cells } if cells.is_empty() => Answer::NotApplicable,
            Truth::Cells { cells } => Answer::Cells { cells: cells.clone() },
        };
        assert_eq!(score_response(q, &answer, t, &s).unwrap(), Some(100.0), "{}", q.id);
    }
}

#[test]
fn default_bank_covers_every_requirement() {
    let bank = QueryBank::default_bank();
    assert_eq!(bank.queries.len(), 28);
    assert!(bank.missing_tags().is_empty());
    let tags: BTreeSet<&str> = bank.queries.iter().map(|q| q.tag.as_str()).collect();
    for t in REQUIREMENT_TAGS {
        assert!(tags.contains(t), "{t}");
    }
    for pause in 1..=2 {
        let levels: BTreeSet<SaLevel> = bank.for_pause(pause).iter().map(|q| q.level).collect();
        assert_eq!(bank.for_pause(pause).len(), 14);
        assert_eq!(levels.len(), 3);
    }
}

fn question(i: usize, level: usize, score: f64) -> QuestionScore {
    QuestionScore { query_id: format!("q{i}"), level: SaLevel::ALL[level % 3], dimension: (i % 6) as u8 + 1, score: Some(score) }
}

proptest! {
    #[test]
    fn sagat_means_permutation_invariant_and_bounded(
        scores in prop::collection::vec((0usize..3, 0.0f64..=100.0), 1..30),
        rot in 0usize..30,
    ) {
        let qs: Vec<QuestionScore> = scores.iter().enumerate().map(|(i, (l, s))| question(i, *l, *s)).collect();
        let mut shuffled = qs.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = aggregate_sagat(qs).unwrap();
        let b = aggregate_sagat(shuffled).unwrap();
        prop_assert!((a.overall - b.overall).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&a.overall));
        for l in SaLevel::ALL {
            match (a.level(l), b.level(l)) {
                (Some(x), Some(y)) => {
                    prop_assert!((x - y).abs() < 1e-9);
                    prop_assert!((0.0..=100.0).contains(&x));
                }
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }
        for d in 1..=6u8 {
            prop_assert_eq!(a.dimension(d).is_some(), b.dimension(d).is_some());
        }
    }
}
