mod common;

use circuitprobe::scoring::{
    anomaly_score, combined_rank, enumerate_blocks, stability_score, CandidateBlock, CircuitType, RankConfig,
    RankedReport,
};
use circuitprobe::stats::LayerStatsTable;
use circuitprobe::trace::TraceMeta;
use common::oracle::{oracle_rank, OracleReport, OracleSeries};
use proptest::prelude::*;

fn table(series: [Vec<f64>; 5]) -> LayerStatsTable {
    let [change_mean, self_sim_mean, cross_var, eff_rank, change_deriv] = series;
    let l = change_mean.len();
    LayerStatsTable {
        n_layers: l,
        change_std: vec![0.0; l],
        growth_mean: vec![1.0; l],
        change_mean,
        self_sim_mean,
        cross_var,
        eff_rank,
        change_deriv,
        meta: TraceMeta::new("synthetic", l, 10, 16),
        warnings: vec![],
    }
}

fn series_of(t: &LayerStatsTable) -> OracleSeries {
    OracleSeries {
        change_mean: t.change_mean.clone(),
        self_sim_mean: t.self_sim_mean.clone(),
        cross_var: t.cross_var.clone(),
        eff_rank: t.eff_rank.clone(),
        change_deriv: t.change_deriv.clone(),
    }
}

fn assert_report_matches(r: &RankedReport, o: &OracleReport, tol: f64) {
    assert_eq!(r.candidates.len(), o.rows.len());
    for (i, (c, w)) in r.candidates.iter().zip(&o.rows).enumerate() {
        assert_eq!((c.s, c.e), (w.s, w.e), "order differs at position {i}");
        let pairs = [
            ("z_gradient", c.z_gradient, w.z_gradient),
            ("z_growth", c.z_growth, w.z_growth),
            ("t_transition", c.t_transition, w.t_transition),
            ("z_rank", c.z_rank, w.z_rank),
            ("z_change", c.z_change, w.z_change),
            ("z_sim", c.z_sim, w.z_sim),
            ("z_var", c.z_var, w.z_var),
            ("s_stability", c.s_stability, w.s_stability),
            ("s_anomaly", c.s_anomaly, w.s_anomaly),
            ("stability_norm", c.stability_norm, w.stability_norm),
            ("anomaly_norm", c.anomaly_norm, w.anomaly_norm),
            ("combined", c.combined, w.combined),
        ];
        for (name, got, want) in pairs {
            assert!((got - want).abs() <= tol, "[{}, {}) {name}: {got} vs {want}", c.s, c.e);
        }
        assert_eq!(c.circuit_type == CircuitType::Stability, w.is_stability);
    }
    assert_eq!((r.top_stability.s, r.top_stability.e), o.top_stability);
    assert_eq!((r.top_anomaly.s, r.top_anomaly.e), o.top_anomaly);
}

fn change_only(change_mean: Vec<f64>) -> LayerStatsTable {
    let l = change_mean.len();
    let mut deriv: Vec<f64> = change_mean.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    deriv.insert(0, deriv[0]);
    table([change_mean, vec![0.5; l], vec![2.0; l], vec![3.0; l], deriv])
}

#[test]
fn flat_derivative_after_drop_is_best_width_three_stability_block() {
    let t = change_only(vec![50.0, 20.0, 5.0, 5.0, 5.0, 5.0, 5.0, 30.0]);
    let oracle = oracle_rank(&series_of(&t), 3, 5);
    assert_eq!(oracle.rows.len(), 15);
    let best_w3 = oracle
        .rows
        .iter()
        .filter(|r| r.e - r.s == 3)
        .max_by(|a, b| a.s_stability.partial_cmp(&b.s_stability).unwrap())
        .unwrap();
    assert_eq!((best_w3.s, best_w3.e), (2, 5));

    let lib_best = enumerate_blocks(8, 3, 3)
        .unwrap()
        .into_iter()
        .max_by(|a, b| {
            let sa = stability_score(&t, *a).unwrap().s_stability;
            let sb = stability_score(&t, *b).unwrap().s_stability;
            sa.partial_cmp(&sb).unwrap()
        })
        .unwrap();
    assert_eq!(lib_best, CandidateBlock::new(2, 5));
    assert_report_matches(&combined_rank(&t, RankConfig::default()).unwrap(), &oracle, 1e-9);
}

#[test]
fn late_spike_ranks_first_by_anomaly() {
    let l = 12;
    let mut change = vec![1.0; l];
    for c in &mut change[8..11] {
        *c = 100.0;
    }
    let t = change_only(change);
    let oracle = oracle_rank(&series_of(&t), 3, 5);
    let best = oracle.rows.iter().max_by(|a, b| a.s_anomaly.partial_cmp(&b.s_anomaly).unwrap()).unwrap();
    assert_eq!((best.s, best.e), (8, 11));
    let r = combined_rank(&t, RankConfig::default()).unwrap();
    assert_eq!(r.top_anomaly, CandidateBlock::new(8, 11));
    assert_report_matches(&r, &oracle, 1e-9);
}

#[test]
fn mirrored_stats_mirror_the_anomaly_ranking() {
    let t = table([
        vec![9.0, 3.0, 4.0, 2.5, 2.0, 2.2, 8.0, 12.0, 30.0],
        vec![0.2, 0.9, 0.8, 0.95, 0.97, 0.9, 0.7, 0.6, 0.3],
        vec![1.0, 1.5, 2.0, 2.2, 2.1, 3.0, 5.0, 9.0, 20.0],
        vec![1.5, 2.0, 2.5, 2.4, 2.2, 2.6, 3.0, 3.5, 4.0],
        vec![6.0, 6.0, 1.0, 1.5, 0.5, 0.2, 5.8, 4.0, 18.0],
    ]);
    let rev = |v: &Vec<f64>| v.iter().rev().cloned().collect::<Vec<_>>();
    let m =
        table([rev(&t.change_mean), rev(&t.self_sim_mean), rev(&t.cross_var), rev(&t.eff_rank), rev(&t.change_deriv)]);
    let l = t.n_layers;
    for b in enumerate_blocks(l, 3, 5).unwrap() {
        let mirrored = CandidateBlock::new(l - b.e, l - b.s);
        let a = anomaly_score(&t, b).unwrap().s_anomaly;
        let c = anomaly_score(&m, mirrored).unwrap().s_anomaly;
        assert!((a - c).abs() < 1e-12, "{b}: {a} vs {c}");
    }
    let ot = oracle_rank(&series_of(&t), 3, 5);
    let om = oracle_rank(&series_of(&m), 3, 5);
    let by_anomaly = |o: &OracleReport| {
        let mut rows = o.rows.clone();
        rows.sort_by(|a, b| b.s_anomaly.partial_cmp(&a.s_anomaly).unwrap());
        rows.into_iter().map(|r| (r.s, r.e, r.s_anomaly)).collect::<Vec<_>>()
    };
    let a = by_anomaly(&ot);
    let b = by_anomaly(&om);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.2 - y.2).abs() < 1e-12);
    }
    let r = combined_rank(&t, RankConfig::default()).unwrap();
    let rm = combined_rank(&m, RankConfig::default()).unwrap();
    assert_eq!(rm.top_anomaly, CandidateBlock::new(l - r.top_anomaly.e, l - r.top_anomaly.s));
}

#[test]
fn early_plateau_and_late_spike_split_the_two_circuit_types() {
    // chaotic first layers, a flat plateau, then a late high-variance spike
    let l = 32;
    let mut change = vec![4.0; l];
    change[0] = 80.0;
    change[1] = 25.0;
    change[2] = 9.0;
    for (i, c) in change.iter_mut().enumerate().take(14).skip(3) {
        *c = 3.0 + 0.01 * i as f64;
    }
    for (i, c) in change.iter_mut().enumerate().skip(14).take(14) {
        *c = 4.0 + ((i * 7) % 5) as f64 * 0.8;
    }
    change[28] = 30.0;
    change[29] = 45.0;
    change[30] = 60.0;
    change[31] = 20.0;
    let mut deriv: Vec<f64> = change.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    deriv.insert(0, deriv[0]);
    let sim: Vec<f64> = change.iter().map(|c| 1.0 - c / 100.0).collect();
    let var: Vec<f64> = (0..l).map(|i| if i >= 28 { 50.0 + i as f64 } else { 5.0 + 0.1 * i as f64 }).collect();
    let rank: Vec<f64> = (0..l).map(|i| 3.0 + (i % 3) as f64 * 0.1).collect();
    let t = table([change, sim, var, rank, deriv]);
    let r = combined_rank(&t, RankConfig::default()).unwrap();
    assert!(r.top_stability.s < l / 4, "{}", r.top_stability);
    assert!(r.top_anomaly.s >= l * 3 / 4, "{}", r.top_anomaly);
    assert_report_matches(&r, &oracle_rank(&series_of(&t), 3, 5), 1e-9);
}

#[test]
fn scoring_is_deterministic() {
    let t = change_only((0..20).map(|i| ((i * 37) % 11) as f64 + 1.0).collect());
    let a = combined_rank(&t, RankConfig::default()).unwrap().to_json();
    let b = combined_rank(&t, RankConfig::default()).unwrap().to_json();
    assert_eq!(a, b);
}

fn stats_strategy() -> impl Strategy<Value = LayerStatsTable> {
    (5usize..=10).prop_flat_map(|l| {
        let s = || prop::collection::vec(0.0f64..10.0, l);
        (s(), prop::collection::vec(-1.0f64..1.0, l), s(), s(), s()).prop_map(|(a, b, c, d, e)| table([a, b, c, d, e]))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_brute_force_oracle(t in stats_strategy()) {
        let r = combined_rank(&t, RankConfig::default()).unwrap();
        assert_report_matches(&r, &oracle_rank(&series_of(&t), 3, 5), 1e-9);
    }

    #[test]
    fn normalization_bounds(t in stats_strategy()) {
        let r = combined_rank(&t, RankConfig::default()).unwrap();
        for c in &r.candidates {
            prop_assert!((0.0..=1.0).contains(&c.stability_norm));
            prop_assert!((0.0..=1.0).contains(&c.anomaly_norm));
            prop_assert_eq!(c.combined, c.stability_norm.max(c.anomaly_norm));
            prop_assert_eq!(c.s_stability, 1.5 * c.z_gradient + c.z_growth + c.t_transition + 0.5 * c.z_rank);
            prop_assert_eq!(c.s_anomaly, c.z_change + c.z_sim + c.z_var + c.z_rank);
        }
        let stab: Vec<f64> = r.candidates.iter().map(|c| c.s_stability).collect();
        if stab.iter().any(|s| *s != stab[0]) {
            prop_assert!(r.candidates.iter().any(|c| c.stability_norm == 1.0));
        }
        let anom: Vec<f64> = r.candidates.iter().map(|c| c.s_anomaly).collect();
        if anom.iter().any(|s| *s != anom[0]) {
            prop_assert!(r.candidates.iter().any(|c| c.anomaly_norm == 1.0));
        }
        let best_stab = r.candidates.iter().map(|c| c.s_stability).fold(f64::NEG_INFINITY, f64::max);
        let top = r.candidates.iter().find(|c| c.block() == r.top_stability).unwrap();
        prop_assert_eq!(top.s_stability, best_stab);
    }

    #[test]
    fn affine_change_of_scale_keeps_rankings(t in stats_strategy(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        // every series except cross_var takes a*x + b; cross_var is only scaled
        let mut u = t.clone();
        for v in [&mut u.change_mean, &mut u.self_sim_mean, &mut u.eff_rank, &mut u.change_deriv] {
            v.iter_mut().for_each(|x| *x = a * *x + b);
        }
        u.cross_var.iter_mut().for_each(|x| *x *= a);
        let r1 = combined_rank(&t, RankConfig::default()).unwrap();
        let r2 = combined_rank(&u, RankConfig::default()).unwrap();
        let key = |r: &RankedReport| {
            let mut rows: Vec<_> = r.candidates.iter().map(|c| (c.s, c.e, c.s_stability, c.s_anomaly)).collect();
            rows.sort_by_key(|k| (k.0, k.1));
            rows
        };
        for (x, y) in key(&r1).into_iter().zip(key(&r2)) {
            prop_assert!((x.2 - y.2).abs() < 1e-9 * x.2.abs().max(1.0), "{x:?} vs {y:?}");
            prop_assert!((x.3 - y.3).abs() < 1e-9 * x.3.abs().max(1.0), "{x:?} vs {y:?}");
        }
    }
}
