use proptest::prelude::*;
use vcoach_core::analytics::{
    cohens_d, compare, exact_p, group_series, impute, mann_whitney_u, normal_p, report, Arm, ColumnKind,
};
use vcoach_core::metrics::MetricId;
use vcoach_core::TaskMetrics;

/// Every way of choosing `k` of `0..n`, as bitmasks.
fn subsets(n: usize, k: usize) -> Vec<u32> {
    (0u32..1 << n).filter(|m| m.count_ones() as usize == k).collect()
}

/// U for the a-sample by pairwise counting (ties count one half).
fn pairwise_u(a: &[f64], b: &[f64]) -> f64 {
    a.iter().flat_map(|x| b.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 })).sum()
}

/// Two-sided exact p by brute force over all rank splits.
fn brute_exact_p(u: f64, n: usize, m: usize) -> f64 {
    let ranks: Vec<f64> = (1..=n + m).map(|r| r as f64).collect();
    let splits = subsets(n + m, n);
    let extreme = splits
        .iter()
        .filter(|mask| {
            let (a, b): (Vec<f64>, Vec<f64>) = ranks.iter().enumerate().fold((vec![], vec![]), |(mut a, mut b), (i, r)| {
                if *mask & (1 << i) != 0 { a.push(*r) } else { b.push(*r) }
                (a, b)
            });
            let ua = pairwise_u(&a, &b);
            ua <= u || ua >= (n * m) as f64 - u
        })
        .count();
    extreme as f64 / splits.len() as f64
}

#[test]
fn exact_p_matches_brute_force() {
    assert_eq!(mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap().p, 0.1);
    for (n, m) in [(1, 1), (2, 3), (3, 3), (4, 5), (6, 6), (2, 10)] {
        for u in 0..=(n * m / 2) {
            let (got, want) = (exact_p(u as f64, n, m), brute_exact_p(u as f64, n, m));
            assert!((got - want).abs() < 1e-12, "n={n} m={m} u={u}: {got} vs {want}");
        }
    }
}

#[test]
fn normal_approximation_tracks_exact_for_all_six_by_six_splits() {
    let splits = subsets(12, 6);
    assert_eq!(splits.len(), 924);
    let mut worst = 0.0f64;
    for mask in splits {
        let (a, b): (Vec<f64>, Vec<f64>) = (1..=12).map(|r| r as f64).partition(|r| mask & (1 << (*r as usize - 1)) != 0);
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(r.exact);
        assert_eq!(r.u, pairwise_u(&a, &b).min(36.0 - pairwise_u(&a, &b)));
        worst = worst.max((normal_p(r.u, 6, 6, &[]) - r.p).abs());
    }
    assert!(worst < 0.02, "worst gap {worst}");
}

#[test]
fn cohens_d_fixture() {
    assert!((cohens_d(&[2.0, 4.0], &[1.0, 3.0]).unwrap() - 0.70711).abs() < 1e-5);
}

#[test]
fn imputation_uses_mean_and_median() {
    let m = vec![vec![Some(2.0), Some(1.0)], vec![None, Some(2.0)], vec![Some(4.0), None], vec![Some(3.0), Some(10.0)]];
    let out = impute(&m, &[ColumnKind::Continuous, ColumnKind::Count]).unwrap();
    assert_eq!(out[1][0], 3.0);
    assert_eq!(out[2][1], 2.0);
    assert_eq!(out[0], vec![2.0, 1.0]);
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 2..15)
}

proptest! {
    #[test]
    fn mwu_is_invariant_under_monotone_maps(a in sample(), b in sample()) {
        let base = mann_whitney_u(&a, &b).unwrap();
        let f = |x: &f64| (x / 10.0).exp() * 3.0 + x.powi(3) * 1e-3 + 7.0;
        let ta: Vec<f64> = a.iter().map(f).collect();
        let tb: Vec<f64> = b.iter().map(f).collect();
        let mapped = mann_whitney_u(&ta, &tb).unwrap();
        prop_assert_eq!(base.u, mapped.u);
        prop_assert!((base.p - mapped.p).abs() < 1e-12);
        prop_assert!(base.p > 0.0 && base.p <= 1.0);
        let ua = pairwise_u(&a, &b);
        prop_assert!((base.u - ua.min((a.len() * b.len()) as f64 - ua)).abs() < 1e-9);
    }

    #[test]
    fn cohens_d_is_affine_equivariant(a in sample(), b in sample(), c in 0.01f64..100.0, k in -100.0f64..100.0) {
        if let Ok(d) = cohens_d(&a, &b) {
            let s = |v: &[f64]| v.iter().map(|x| x * c + k).collect::<Vec<f64>>();
            let d2 = cohens_d(&s(&a), &s(&b)).unwrap();
            prop_assert!((d - d2).abs() < 1e-6 * d.abs().max(1.0));
            let swapped = cohens_d(&b, &a).unwrap();
            prop_assert!((d + swapped).abs() < 1e-9 * d.abs().max(1.0));
        }
    }
}

fn metrics(v: f64) -> TaskMetrics {
    TaskMetrics {
        completion_time: 100.0 + v,
        path_length: 500.0,
        movements: 1.0,
        ribbon_area: 10.0,
        master_path_length: 900.0,
        master_workspace_volume: 1000.0,
        excess_needle_pierces: 0,
        excess_instrument_force_count: 0,
        excess_instrument_force_time: 0.0,
        excess_needle_tissue_force_count: 0,
        excess_needle_tissue_force_time: 0.0,
        grasp_position_dev: Some(10.0),
        grasp_orientation_dev: Some(20.0 + v),
        in_plane_dev: None,
        out_plane_dev: Some(1.0),
    }
}

fn cohort(arm: Arm, n: usize, drop: f64) -> Vec<vcoach_core::ParticipantSeries> {
    let mut rows = Vec::new();
    for i in 0..n {
        let jitter = i as f64 * 0.37 % 1.0;
        for (j, label) in ["baseline", "rep2", "rep3", "rep4", "final"].iter().enumerate() {
            let mut m = metrics(jitter);
            m.grasp_orientation_dev = Some(20.0 + jitter - drop * j as f64);
            m.in_plane_dev = if i == 0 { None } else { Some(0.5 + jitter) };
            rows.push((format!("{arm}-{i}"), label.to_string(), m));
        }
    }
    group_series(arm, rows).unwrap()
}

#[test]
fn report_shape_and_sign_convention() {
    let mut groups = cohort(Arm::Experimental, 7, 3.0);
    groups.extend(cohort(Arm::Control, 8, 0.5));
    let r = report(&groups).unwrap();
    let names: Vec<&str> = r.table.rows.iter().map(|row| row.metric.as_str()).collect();
    assert_eq!(names, MetricId::ALL.map(MetricId::name));
    assert_eq!(r.grid.cells.len(), 15);
    assert!(r.grid.cells.iter().all(|row| row.len() == 4));
    let go = MetricId::ALL.iter().position(|m| *m == MetricId::GraspOrientationDev).unwrap();
    let row = &r.table.rows[go];
    // Experimental orientation error drops by 12, control by 2: exact for the final deltas.
    assert!((row.experimental.mean + 12.0).abs() < 1e-9 && (row.control.mean + 2.0).abs() < 1e-9);
    assert!(row.significant);
    assert!(row.d.is_none(), "zero spread in both arms");
    // Identical arms for constant metrics: no effect, p = 1.
    let pl = MetricId::ALL.iter().position(|m| *m == MetricId::PathLength).unwrap();
    assert_eq!(r.table.rows[pl].p, 1.0);
    assert!(r.grid.cells[pl].iter().all(|c| c.d.is_none() && !c.significant));
    assert_eq!(r.table.rows[go].experimental.to_string(), "-12.00 (0.00)");
    // Pure function of input.
    assert_eq!(report(&groups).unwrap(), r);
    let text = r.to_text();
    assert!(text.contains("Grasp Orientation Dev. (degree)"));
    assert_eq!(r.grid_csv().lines().count(), 1 + 60);
    let only_exp: Vec<_> = groups.iter().filter(|g| g.arm == Arm::Experimental).cloned().collect();
    assert!(compare(&only_exp, "final").is_err());
}

#[test]
fn grid_sign_is_positive_for_larger_experimental_improvement() {
    let mut groups = cohort(Arm::Experimental, 6, 3.0);
    groups.extend(cohort(Arm::Control, 6, 0.5));
    // Spread the orientation deltas so d is defined.
    for (k, g) in groups.iter_mut().enumerate() {
        for (label, m) in g.repetitions.iter_mut() {
            if label == "final" {
                *m.grasp_orientation_dev.as_mut().unwrap() += (k % 3) as f64;
            }
        }
    }
    let r = report(&groups).unwrap();
    let go = MetricId::ALL.iter().position(|m| *m == MetricId::GraspOrientationDev).unwrap();
    let raw = r.table.rows[go].d.unwrap();
    assert!(raw < 0.0, "experimental deltas are more negative");
    assert_eq!(r.grid.cells[go][3].d.unwrap(), -raw);
}
