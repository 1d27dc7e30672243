//! Naive reference implementations used only by tests.
//!
//! Written straight from the definitions with explicit loops; nothing here calls into the
//! library's statistics or scoring code.

#![allow(
    dead_code,
    clippy::needless_range_loop,
    clippy::manual_clamp,
    clippy::implicit_saturating_sub,
    clippy::manual_is_multiple_of
)]

use nalgebra::DMatrix;

/// hidden[n][i][k]
pub type Hidden = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone)]
pub struct OracleStats {
    pub change_mean: Vec<f64>,
    pub change_std: Vec<f64>,
    pub self_sim_mean: Vec<f64>,
    pub growth_mean: Vec<f64>,
    pub cross_var: Vec<f64>,
    pub eff_rank: Vec<f64>,
    pub change_deriv: Vec<f64>,
}

pub fn hidden_from_flat(values: &[f32], n: usize, layers: usize, d: usize) -> Hidden {
    let mut out = vec![vec![vec![0.0; d]; layers + 1]; n];
    let mut idx = 0;
    for ex in out.iter_mut() {
        for h in ex.iter_mut() {
            for x in h.iter_mut() {
                *x = values[idx] as f64;
                idx += 1;
            }
        }
    }
    out
}

pub fn oracle_stats(h: &Hidden) -> OracleStats {
    let n = h.len();
    let layers = h[0].len() - 1;
    let d = h[0][0].len();
    let mut s = OracleStats {
        change_mean: vec![],
        change_std: vec![],
        self_sim_mean: vec![],
        growth_mean: vec![],
        cross_var: vec![],
        eff_rank: vec![],
        change_deriv: vec![],
    };
    for i in 0..layers {
        let mut changes = vec![];
        let mut cos_sum = 0.0;
        let mut ratio_sum = 0.0;
        for ex in 0..n {
            let a = &h[ex][i];
            let b = &h[ex][i + 1];
            let mut sq = 0.0;
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for k in 0..d {
                sq += (b[k] - a[k]) * (b[k] - a[k]);
                dot += a[k] * b[k];
                na += a[k] * a[k];
                nb += b[k] * b[k];
            }
            changes.push(sq.sqrt());
            let (na, nb) = (na.sqrt(), nb.sqrt());
            cos_sum += if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
            ratio_sum += if na == 0.0 { 1.0 } else { nb / na };
        }
        let mean = changes.iter().sum::<f64>() / n as f64;
        let var = changes.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64;
        s.change_mean.push(mean);
        s.change_std.push(var.sqrt());
        s.self_sim_mean.push(cos_sum / n as f64);
        s.growth_mean.push(ratio_sum / n as f64);

        let mut total = 0.0;
        for k in 0..d {
            let mu = (0..n).map(|ex| h[ex][i + 1][k]).sum::<f64>() / n as f64;
            total += (0..n).map(|ex| (h[ex][i + 1][k] - mu).powi(2)).sum::<f64>() / n as f64;
        }
        s.cross_var.push(if n < 2 { 0.0 } else { total / d as f64 });

        let m = DMatrix::from_fn(n, d, |r, c| h[r][i + 1][c] - h[r][i][c]);
        s.eff_rank.push(oracle_entropy_rank(&m));
    }
    let mut deriv = vec![0.0; layers];
    for i in 1..layers {
        deriv[i] = (s.change_mean[i] - s.change_mean[i - 1]).abs();
    }
    deriv[0] = deriv[1];
    s.change_deriv = deriv;
    s
}

pub fn oracle_entropy_rank(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let kept: Vec<f64> = sv.iter().cloned().filter(|&x| x > 1e-9 * max).collect();
    let total: f64 = kept.iter().sum();
    let mut entropy = 0.0;
    for x in kept {
        let p = x / total;
        entropy -= p * p.ln();
    }
    entropy.exp()
}

/// Per-layer series a scoring oracle needs.
#[derive(Debug, Clone)]
pub struct OracleSeries {
    pub change_mean: Vec<f64>,
    pub self_sim_mean: Vec<f64>,
    pub cross_var: Vec<f64>,
    pub eff_rank: Vec<f64>,
    pub change_deriv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub s: usize,
    pub e: usize,
    pub z_gradient: f64,
    pub z_growth: f64,
    pub t_transition: f64,
    pub z_rank: f64,
    pub z_change: f64,
    pub z_sim: f64,
    pub z_var: f64,
    pub s_stability: f64,
    pub s_anomaly: f64,
    pub stability_norm: f64,
    pub anomaly_norm: f64,
    pub combined: f64,
    pub is_stability: bool,
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub top_stability: (usize, usize),
    pub top_anomaly: (usize, usize),
}

fn mean(xs: &[f64]) -> f64 {
    let mut t = 0.0;
    for x in xs {
        t += x;
    }
    t / xs.len() as f64
}

fn popstd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let mut t = 0.0;
    for x in xs {
        t += (x - m) * (x - m);
    }
    (t / xs.len() as f64).sqrt()
}

fn z_against(xs: &[f64], value: f64) -> f64 {
    let sd = popstd(xs);
    if sd == 0.0 {
        0.0
    } else {
        (value - mean(xs)) / sd
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 0 {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    } else {
        v[n / 2]
    }
}

fn block_avg(xs: &[f64], s: usize, e: usize) -> f64 {
    mean(&xs[s..e])
}

/// Evaluates both score formulas for every block and ranks them by the max of the
/// min-max-normalized scores.
pub fn oracle_rank(st: &OracleSeries, min_w: usize, max_w: usize) -> OracleReport {
    let layers = st.change_mean.len();
    let mut growth = vec![1.0; layers];
    for i in 1..layers {
        growth[i] = if st.cross_var[i - 1] == 0.0 { 1.0 } else { st.cross_var[i] / st.cross_var[i - 1] };
    }

    let mut rows = vec![];
    for w in min_w..=max_w {
        for s in 0..=(layers - w) {
            let e = s + w;
            let z_gradient = -z_against(&st.change_deriv, block_avg(&st.change_deriv, s, e));
            let gsd = popstd(&growth);
            let z_growth = if gsd == 0.0 { 0.0 } else { -(block_avg(&growth, s, e) - median(&growth)).abs() / gsd };
            let pre_lo = if s >= w { s - w } else { 0 };
            let csd = popstd(&st.change_mean);
            let t_transition = if pre_lo == s || csd == 0.0 {
                0.0
            } else {
                let t = (block_avg(&st.change_mean, pre_lo, s) - block_avg(&st.change_mean, s, e)) / csd;
                t.max(0.0).min(3.0)
            };
            let z_rank = z_against(&st.eff_rank, block_avg(&st.eff_rank, s, e));
            let z_change = z_against(&st.change_mean, block_avg(&st.change_mean, s, e));
            let z_sim = -z_against(&st.self_sim_mean, block_avg(&st.self_sim_mean, s, e));
            let z_var = z_against(&st.cross_var, block_avg(&st.cross_var, s, e));
            rows.push(OracleRow {
                s,
                e,
                z_gradient,
                z_growth,
                t_transition,
                z_rank,
                z_change,
                z_sim,
                z_var,
                s_stability: 1.5 * z_gradient + z_growth + t_transition + 0.5 * z_rank,
                s_anomaly: z_change + z_sim + z_var + z_rank,
                stability_norm: 0.0,
                anomaly_norm: 0.0,
                combined: 0.0,
                is_stability: true,
            });
        }
    }

    let normalize = |vals: Vec<f64>| -> Vec<f64> {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        vals.iter().map(|v| if hi == lo { 0.5 } else { (v - lo) / (hi - lo) }).collect()
    };
    let sn = normalize(rows.iter().map(|r| r.s_stability).collect());
    let an = normalize(rows.iter().map(|r| r.s_anomaly).collect());
    for (i, r) in rows.iter_mut().enumerate() {
        r.stability_norm = sn[i];
        r.anomaly_norm = an[i];
        r.combined = if sn[i] > an[i] { sn[i] } else { an[i] };
        r.is_stability = sn[i] >= an[i];
    }

    // Selection by linear scan: strictly better score wins, equal score keeps the
    // earlier start, then the narrower block.
    let pick = |key: &dyn Fn(&OracleRow) -> f64| -> (usize, usize) {
        let mut best = &rows[0];
        for r in &rows[1..] {
            let (a, b) = (key(r), key(best));
            let better = a > b || (a == b && (r.s < best.s || (r.s == best.s && r.e - r.s < best.e - best.s)));
            if better {
                best = r;
            }
        }
        (best.s, best.e)
    };
    let top_stability = pick(&|r| r.s_stability);
    let top_anomaly = pick(&|r| r.s_anomaly);

    // Insertion sort with the same total order.
    let mut sorted: Vec<OracleRow> = vec![];
    for r in rows {
        let mut at = sorted.len();
        for (j, q) in sorted.iter().enumerate() {
            let before = r.combined > q.combined
                || (r.combined == q.combined && (r.s < q.s || (r.s == q.s && r.e - r.s < q.e - q.s)));
            if before {
                at = j;
                break;
            }
        }
        sorted.insert(at, r);
    }
    OracleReport { rows: sorted, top_stability, top_anomaly }
}
