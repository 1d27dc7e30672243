#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use circuitprobe::{write_stats, write_trace, LayerStatsTable, TraceMeta};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_circuitprobe"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn circuitprobe")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// Deterministic pseudo-random trace with `layers` layers.
pub fn write_random_trace(path: &Path, layers: usize, n: usize, d: usize, seed: u64) {
    let meta = TraceMeta::new(format!("synthetic-{seed}"), layers, n, d);
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let values: Vec<f32> = (0..meta.value_count())
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 40) as f32 / (1u64 << 24) as f32) * 4.0 - 2.0
        })
        .collect();
    let f = std::fs::File::create(path).unwrap();
    write_trace(&meta, &values, f).unwrap();
}

fn with_deriv(change: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut deriv: Vec<f64> = change.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    deriv.insert(0, deriv[0]);
    (change, deriv)
}

/// 32 layers: chaotic entry, a flat plateau, then a late high-variance spike.
pub fn plateau_spike_stats() -> LayerStatsTable {
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
    let (change_mean, change_deriv) = with_deriv(change);
    LayerStatsTable {
        n_layers: l,
        self_sim_mean: change_mean.iter().map(|c| 1.0 - c / 100.0).collect(),
        cross_var: (0..l).map(|i| if i >= 28 { 50.0 + i as f64 } else { 5.0 + 0.1 * i as f64 }).collect(),
        eff_rank: (0..l).map(|i| 3.0 + (i % 3) as f64 * 0.1).collect(),
        change_std: vec![0.5; l],
        growth_mean: vec![1.0; l],
        change_mean,
        change_deriv,
        meta: TraceMeta::new("plateau-spike", l, 20, 64),
        warnings: vec![],
    }
}

pub fn small_stats(l: usize) -> LayerStatsTable {
    let (change_mean, change_deriv) = with_deriv((0..l).map(|i| 1.0 + ((i * 5) % 7) as f64).collect());
    LayerStatsTable {
        n_layers: l,
        change_std: vec![0.1; l],
        self_sim_mean: (0..l).map(|i| 0.5 + 0.05 * i as f64).collect(),
        growth_mean: vec![1.1; l],
        cross_var: (0..l).map(|i| 1.0 + i as f64).collect(),
        eff_rank: (0..l).map(|i| 2.0 + 0.1 * ((i * 3) % 4) as f64).collect(),
        change_mean,
        change_deriv,
        meta: TraceMeta::new("small", l, 8, 16),
        warnings: vec![],
    }
}

pub fn save_stats(path: &Path, stats: &LayerStatsTable) {
    write_stats(stats, std::fs::File::create(path).unwrap()).unwrap();
}
