use hsi_core::hazard::HazardKind;
use hsi_core::sagat::SaLevel;
use hsi_core::session::Attempt;
use hsi_core::stats::{
    build_cohort, experiment_reports, midranks, spearman, summarize, wilcoxon_paired, AnalysisConfig, CohortError,
    CohortRow, CohortTable, Column, Method, SpearmanPMethod, StatsError,
};
use proptest::prelude::*;

fn row(pid: &str, hazard: HazardKind, attempt: Attempt, ca: f64, sagat: f64) -> CohortRow {
    CohortRow {
        participant_id: pid.into(),
        hazard_kind: hazard,
        attempt,
        task_order_index: 0,
        ca,
        na: ca / 2.0,
        naq1: ca / 2.0 + 0.1,
        naq2: ca / 2.0 + 0.2,
        all_deactivated: false,
        s_sagat: Some(sagat),
        levels: [Some(sagat); 3],
        dims: [Some(sagat); 6],
        s_sart: Some(10.0),
        d: Some(10.0),
        s: Some(10.0),
        u: Some(10.0),
        sart_mean: Some(4.0),
        ratings: Some([4; 10]),
    }
}

/// Two-sided p by walking all 2^n sign assignments of the ranks.
fn brute_wilcoxon_p(d: &[f64]) -> f64 {
    let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let wp: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let wm: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v < 0.0).map(|(_, r)| r).sum();
    let w = wp.min(wm);
    let n = ranks.len();
    let mut le = 0u64;
    for mask in 0u64..(1 << n) {
        let t: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if t <= w + 1e-9 {
            le += 1;
        }
    }
    (2.0 * le as f64 / (1u64 << n) as f64).min(1.0)
}

fn brute_quantile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

#[test]
fn wilcoxon_hand_examples() {
    let r = wilcoxon_paired(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(r.w_minus, 0.0);
    assert!((r.p_value - 0.25).abs() < 1e-12);
    assert_eq!(r.method, Method::Exact);

    let r = wilcoxon_paired(&[0.0, 0.0], &[1.0, -1.0]).unwrap();
    assert_eq!(r.statistic, 1.5);
    assert_eq!(r.p_value, 1.0);

    let r = wilcoxon_paired(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
    assert_eq!(r.method, Method::Degenerate);
    assert_eq!(r.p_value, 1.0);

    assert!(matches!(wilcoxon_paired(&[1.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch(1, 2))));
}

#[test]
fn spearman_tied_example_matches_hand_pearson() {
    let c = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0], SpearmanPMethod::TApprox).unwrap();
    // ranks [1, 2.5, 2.5, 4] vs [1, 2, 3, 4]: deviations [-1.5, 0, 0, 1.5] and [-1.5, -0.5, 0.5, 1.5]
    let expected = 4.5 / (4.5f64 * 5.0).sqrt();
    assert!((c.rho - expected).abs() < 1e-12);
}

#[test]
fn spearman_permutation_p_converges() {
    let x: Vec<f64> = (0..15).map(f64::from).collect();
    let y = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0, 5.0, 8.0, 9.0, 7.0, 9.0];
    for seed in [1, 2, 3] {
        let p = |k| spearman(&x, &y, SpearmanPMethod::Permutation { permutations: k, seed }).unwrap().p_value;
        assert!((p(10_000) - p(20_000)).abs() < 0.01);
    }
}

#[test]
fn cohort_of_31_participants_has_186_rows() {
    let mut rows = Vec::new();
    for i in 0..31 {
        for h in HazardKind::STUDY {
            for a in [Attempt::A1, Attempt::A2] {
                rows.push(row(&format!("p{i:02}"), h, a, 5.0, 50.0));
            }
        }
    }
    let t = CohortTable::new(rows).unwrap();
    assert_eq!(t.rows.len(), 186);
    assert_eq!(t.participants().len(), 31);
    assert_eq!(t.to_csv().lines().count(), 187);
}

#[test]
fn m_a2_all_is_mean_of_a2_rows() {
    let rows = vec![
        row("p1", HazardKind::Dis, Attempt::A2, 2.0, 0.0),
        row("p1", HazardKind::Mov, Attempt::A2, 4.0, 0.0),
        row("p1", HazardKind::Spr, Attempt::A2, 6.0, 0.0),
        row("p1", HazardKind::Spr, Attempt::A1, 100.0, 0.0),
    ];
    let t = CohortTable::new(rows).unwrap();
    let m = t.m_a2_all(Column::Ca);
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].value, 4.0);
    assert_eq!(t.s_hazard_a2(HazardKind::Mov, Column::Ca)[0].value, 4.0);
}

#[test]
fn duplicate_participant_task_rejected() {
    let rows = vec![row("p1", HazardKind::Dis, Attempt::A2, 2.0, 0.0), row("p1", HazardKind::Dis, Attempt::A2, 3.0, 0.0)];
    assert!(matches!(CohortTable::new(rows), Err(CohortError::Duplicate { .. })));
}

#[test]
fn empty_directory_gives_empty_table_and_analysis_refuses() {
    let dir = tempfile::tempdir().unwrap();
    let t = build_cohort(dir.path(), None).unwrap();
    assert!(t.is_empty());
    assert!(experiment_reports(&t, &AnalysisConfig::default()).is_err());
    assert!(matches!(build_cohort(&dir.path().join("missing"), None), Err(CohortError::Dir(..))));
}

fn full_cohort(n: usize, ca_a1: impl Fn(usize) -> f64, ca_a2: impl Fn(usize) -> f64, sagat: impl Fn(usize) -> f64) -> CohortTable {
    let mut rows = Vec::new();
    for i in 0..n {
        for h in HazardKind::STUDY {
            rows.push(row(&format!("p{i:02}"), h, Attempt::A1, ca_a1(i), sagat(i)));
            rows.push(row(&format!("p{i:02}"), h, Attempt::A2, ca_a2(i), sagat(i)));
        }
    }
    CohortTable::new(rows).unwrap()
}

#[test]
fn constant_improvement_is_a_significant_decrease() {
    let t = full_cohort(10, |i| 10.0 + i as f64 * 1.7, |i| 9.0 + i as f64 * 1.7, |i| i as f64);
    let r = experiment_reports(&t, &AnalysisConfig::default()).unwrap();
    for h in HazardKind::STUDY {
        let w = r.wilcoxon_row(h, Column::Ca).unwrap();
        assert_eq!(w.result.method, Method::Exact);
        // all ten differences are -1 with tied ranks 5.5: W+ = 0, p = 2 / 2^10
        assert_eq!(w.result.w_plus, 0.0);
        assert!((w.result.p_value - 2.0 / 1024.0).abs() < 1e-12);
        assert!(w.significant);
        assert_eq!(w.direction(), "decrease");
    }
}

#[test]
fn constructed_monotone_gives_strong_negative_rho() {
    let t = full_cohort(12, |i| 20.0 - i as f64, |i| 10.0 - 0.5 * i as f64, |i| 100.0 - 3.0 * (10.0 - 0.5 * i as f64));
    let r = experiment_reports(&t, &AnalysisConfig::default()).unwrap();
    for scope in ["M_A2_all", "S_Dis_A2", "S_Mov_A2", "S_Spr_A2"] {
        let c = r.correlation(scope, Column::SSagat, Column::Ca).unwrap();
        let res = c.result.as_ref().unwrap();
        assert!((res.rho + 1.0).abs() < 1e-12);
        assert_eq!(res.strength.label(), "strong");
        assert!(c.significant);
    }
    let sart = r.correlation("M_A2_all", Column::SSart, Column::Ca).unwrap();
    assert!(sart.result.is_none());
    assert!(sart.note.as_deref().unwrap().contains("constant"));
    assert!(r.correlation("M_A2_all", Column::Level(SaLevel::L2), Column::Naq2).is_some());
    assert!(r.to_text().contains("S_SAGAT"));
    assert!(r.to_csv().lines().next().unwrap().starts_with("section,"));
}

#[test]
fn two_participants_skip_with_notices() {
    let t = full_cohort(2, |i| i as f64 + 3.0, |i| i as f64, |i| i as f64);
    let r = experiment_reports(&t, &AnalysisConfig::default()).unwrap();
    assert!(r.correlations.is_empty());
    assert!(r.wilcoxon.is_empty());
    assert!(r.notices.iter().any(|n| n.scope == "M_A2_all"));
    assert!(r.notices.iter().any(|n| n.scope.starts_with("Wilcoxon")));
}

#[test]
fn bonferroni_only_raises_p() {
    let t = full_cohort(8, |i| 10.0 + (i * 7 % 5) as f64, |i| 9.0 + (i * 3 % 4) as f64, |i| (i * 13 % 7) as f64);
    let plain = experiment_reports(&t, &AnalysisConfig::default()).unwrap();
    let corrected = experiment_reports(&t, &AnalysisConfig { correction: true, ..Default::default() }).unwrap();
    for (a, b) in plain.wilcoxon.iter().zip(&corrected.wilcoxon) {
        assert!(b.p_adjusted >= a.p_adjusted);
        assert!(b.p_adjusted <= 1.0);
    }
}

proptest! {
    #[test]
    fn exact_wilcoxon_matches_enumeration(d in prop::collection::vec(-6i32..=6, 1..=12)) {
        let x = vec![0.0; d.len()];
        let y: Vec<f64> = d.iter().map(|v| f64::from(*v)).collect();
        let r = wilcoxon_paired(&x, &y).unwrap();
        if r.method == Method::Degenerate {
            prop_assert!(d.iter().all(|v| *v == 0));
            prop_assert_eq!(r.p_value, 1.0);
        } else {
            prop_assert!((r.p_value - brute_wilcoxon_p(&y)).abs() < 1e-12);
        }
    }

    #[test]
    fn wilcoxon_p_in_unit_interval(x in prop::collection::vec(-50.0f64..50.0, 1..40), shift in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + shift + (i % 3) as f64).collect();
        let r = wilcoxon_paired(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn summaries_match_sorted_quantiles(v in prop::collection::vec(-100.0f64..100.0, 1..50)) {
        let s = summarize(&v).unwrap();
        prop_assert!((s.median - brute_quantile(&v, 0.5)).abs() < 1e-9);
        prop_assert!((s.q1 - brute_quantile(&v, 0.25)).abs() < 1e-9);
        prop_assert!((s.q3 - brute_quantile(&v, 0.75)).abs() < 1e-9);
        prop_assert!((s.iqr - (s.q3 - s.q1)).abs() < 1e-9);
    }

    #[test]
    fn spearman_scale_invariant(
        pairs in prop::collection::vec((0i32..20, 0i32..20), 3..25),
        a in 0.01f64..100.0,
        b in -100.0f64..100.0,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let ys: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        match (spearman(&x, &y, SpearmanPMethod::TApprox), spearman(&x, &ys, SpearmanPMethod::TApprox)) {
            (Ok(r1), Ok(r2)) => prop_assert!((r1.rho - r2.rho).abs() < 1e-9),
            (Err(e1), Err(e2)) => prop_assert_eq!(e1, e2),
            other => prop_assert!(false, "mismatch {:?}", other),
        }
    }
}
