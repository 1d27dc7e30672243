//! Candidate-block enumeration and ranking.
//!
//! Each block `[s, e)` gets two scores built from z-scores of block-averaged per-layer
//! statistics against their model-wide distribution:
//!
//! ```text
//! stability = 1.5 * z_gradient + z_growth + t_transition + 0.5 * z_rank
//! anomaly   = z_change + z_sim + z_var + z_rank
//! ```
//!
//! Both families are min-max normalized across all candidates and the combined score is
//! the larger of the two.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{LayerStatsTable, StatsError};

pub const DEFAULT_MIN_WIDTH: usize = 3;
pub const DEFAULT_MAX_WIDTH: usize = 5;

/// Upper clamp on the transition bonus.
pub const TRANSITION_CAP: f64 = 3.0;

pub const STABILITY_GRADIENT_WEIGHT: f64 = 1.5;
pub const STABILITY_RANK_WEIGHT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("invalid width bounds: min {min_w}, max {max_w} (need 1 <= min <= max)")]
    Widths { min_w: usize, max_w: usize },
    #[error("{n_layers} layers cannot hold a block of width {max_w}")]
    TooFewLayers { n_layers: usize, max_w: usize },
    #[error("block [{s}, {e}) is not valid for {n_layers} layers")]
    InvalidBlock { s: usize, e: usize, n_layers: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Half-open layer interval `[s, e)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateBlock {
    pub s: usize,
    pub e: usize,
}

impl CandidateBlock {
    pub fn new(s: usize, e: usize) -> Self {
        Self { s, e }
    }

    pub fn width(&self) -> usize {
        self.e - self.s
    }

    pub fn check(&self, n_layers: usize) -> Result<(), ScoreError> {
        if self.s < self.e && self.e <= n_layers {
            Ok(())
        } else {
            Err(ScoreError::InvalidBlock { s: self.s, e: self.e, n_layers })
        }
    }

    pub fn layers(&self) -> std::ops::Range<usize> {
        self.s..self.e
    }
}

impl std::fmt::Display for CandidateBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {})", self.s, self.e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CircuitType {
    Stability,
    Magnitude,
}

impl std::fmt::Display for CircuitType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CircuitType::Stability => "stability",
            CircuitType::Magnitude => "magnitude",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityTerms {
    pub z_gradient: f64,
    pub z_growth: f64,
    pub t_transition: f64,
    pub z_rank: f64,
    pub s_stability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyTerms {
    pub z_change: f64,
    pub z_sim: f64,
    pub z_var: f64,
    pub z_rank: f64,
    pub s_anomaly: f64,
}

/// One report row. Field order is the JSON/CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBlock {
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
    pub circuit_type: CircuitType,
}

impl ScoredBlock {
    pub fn block(&self) -> CandidateBlock {
        CandidateBlock::new(self.s, self.e)
    }
}

pub const CSV_COLUMNS: [&str; 15] = [
    "s",
    "e",
    "z_gradient",
    "z_growth",
    "t_transition",
    "z_rank",
    "z_change",
    "z_sim",
    "z_var",
    "s_stability",
    "s_anomaly",
    "stability_norm",
    "anomaly_norm",
    "combined",
    "circuit_type",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankConfig {
    pub min_w: usize,
    pub max_w: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self { min_w: DEFAULT_MIN_WIDTH, max_w: DEFAULT_MAX_WIDTH }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedReport {
    pub model: String,
    pub n_layers: usize,
    pub config: RankConfig,
    pub candidates: Vec<ScoredBlock>,
    pub top_stability: CandidateBlock,
    pub top_anomaly: CandidateBlock,
}

impl RankedReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for c in &self.candidates {
            let row = [
                c.s.to_string(),
                c.e.to_string(),
                c.z_gradient.to_string(),
                c.z_growth.to_string(),
                c.t_transition.to_string(),
                c.z_rank.to_string(),
                c.z_change.to_string(),
                c.z_sim.to_string(),
                c.z_var.to_string(),
                c.s_stability.to_string(),
                c.s_anomaly.to_string(),
                c.stability_norm.to_string(),
                c.anomaly_norm.to_string(),
                c.combined.to_string(),
                c.circuit_type.to_string(),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// 1-based position of a block in the combined ranking.
    pub fn rank_of(&self, block: CandidateBlock) -> Option<usize> {
        self.candidates.iter().position(|c| c.block() == block).map(|i| i + 1)
    }
}

/// All blocks `[s, s + w)` with `min_w <= w <= max_w`, ordered by width then start.
pub fn enumerate_blocks(n_layers: usize, min_w: usize, max_w: usize) -> Result<Vec<CandidateBlock>, ScoreError> {
    if min_w == 0 || min_w > max_w {
        return Err(ScoreError::Widths { min_w, max_w });
    }
    if n_layers < max_w {
        return Err(ScoreError::TooFewLayers { n_layers, max_w });
    }
    Ok((min_w..=max_w).flat_map(|w| (0..=n_layers - w).map(move |s| CandidateBlock::new(s, s + w))).collect())
}

/// Mean and population standard deviation of a per-layer series.
#[derive(Debug, Clone, Copy)]
struct Baseline {
    mean: f64,
    std: f64,
}

impl Baseline {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    fn z(&self, x: f64) -> f64 {
        if self.std == 0.0 {
            0.0
        } else {
            (x - self.mean) / self.std
        }
    }
}

/// `(values[i] - mean) / popstd`, or 0 for a constant series.
pub fn zscore(values: &[f64], i: usize) -> f64 {
    Baseline::of(values).z(values[i])
}

fn block_mean(values: &[f64], range: std::ops::Range<usize>) -> f64 {
    let n = range.len() as f64;
    values[range].iter().sum::<f64>() / n
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// `cross_var[i] / cross_var[i-1]`, with 1 at layer 0 and for zero denominators.
pub fn variance_growth(cross_var: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(cross_var.len());
    out.push(1.0);
    out.extend(cross_var.windows(2).map(|w| if w[0] == 0.0 { 1.0 } else { w[1] / w[0] }));
    out.truncate(cross_var.len());
    out
}

/// Model-wide baselines shared by every candidate of one stats table.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    stats: &'a LayerStatsTable,
    var_growth: Vec<f64>,
    deriv: Baseline,
    growth: Baseline,
    growth_median: f64,
    change: Baseline,
    rank: Baseline,
    sim: Baseline,
    var: Baseline,
}

impl<'a> Scorer<'a> {
    pub fn new(stats: &'a LayerStatsTable) -> Result<Self, ScoreError> {
        stats.validate()?;
        let var_growth = variance_growth(&stats.cross_var);
        Ok(Self {
            deriv: Baseline::of(&stats.change_deriv),
            growth: Baseline::of(&var_growth),
            growth_median: median(&var_growth),
            change: Baseline::of(&stats.change_mean),
            rank: Baseline::of(&stats.eff_rank),
            sim: Baseline::of(&stats.self_sim_mean),
            var: Baseline::of(&stats.cross_var),
            var_growth,
            stats,
        })
    }

    pub fn stability(&self, block: CandidateBlock) -> StabilityTerms {
        let st = self.stats;
        let z_gradient = -self.deriv.z(block_mean(&st.change_deriv, block.layers()));

        let z_growth = if self.growth.std == 0.0 {
            0.0
        } else {
            let g = block_mean(&self.var_growth, block.layers());
            -(g - self.growth_median).abs() / self.growth.std
        };

        let pre_start = block.s.saturating_sub(block.width());
        let t_transition = if pre_start == block.s || self.change.std == 0.0 {
            0.0
        } else {
            let pre = block_mean(&st.change_mean, pre_start..block.s);
            let inside = block_mean(&st.change_mean, block.layers());
            ((pre - inside) / self.change.std).clamp(0.0, TRANSITION_CAP)
        };

        let z_rank = self.rank.z(block_mean(&st.eff_rank, block.layers()));
        let s_stability =
            STABILITY_GRADIENT_WEIGHT * z_gradient + z_growth + t_transition + STABILITY_RANK_WEIGHT * z_rank;
        StabilityTerms { z_gradient, z_growth, t_transition, z_rank, s_stability }
    }

    pub fn anomaly(&self, block: CandidateBlock) -> AnomalyTerms {
        let st = self.stats;
        let z_change = self.change.z(block_mean(&st.change_mean, block.layers()));
        let z_sim = -self.sim.z(block_mean(&st.self_sim_mean, block.layers()));
        let z_var = self.var.z(block_mean(&st.cross_var, block.layers()));
        let z_rank = self.rank.z(block_mean(&st.eff_rank, block.layers()));
        AnomalyTerms { z_change, z_sim, z_var, z_rank, s_anomaly: z_change + z_sim + z_var + z_rank }
    }
}

pub fn stability_score(stats: &LayerStatsTable, block: CandidateBlock) -> Result<StabilityTerms, ScoreError> {
    block.check(stats.n_layers)?;
    Ok(Scorer::new(stats)?.stability(block))
}

pub fn anomaly_score(stats: &LayerStatsTable, block: CandidateBlock) -> Result<AnomalyTerms, ScoreError> {
    block.check(stats.n_layers)?;
    Ok(Scorer::new(stats)?.anomaly(block))
}

/// Min-max normalization to `[0, 1]`; a constant family maps to 0.5.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}

/// Descending by score, ties to the smaller start and then the smaller width.
fn by_score_then_position(a: (f64, CandidateBlock), b: (f64, CandidateBlock)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.s.cmp(&b.1.s)).then(a.1.width().cmp(&b.1.width()))
}

pub fn combined_rank(stats: &LayerStatsTable, config: RankConfig) -> Result<RankedReport, ScoreError> {
    let scorer = Scorer::new(stats)?;
    let blocks = enumerate_blocks(stats.n_layers, config.min_w, config.max_w)?;

    let stab: Vec<StabilityTerms> = blocks.iter().map(|&b| scorer.stability(b)).collect();
    let anom: Vec<AnomalyTerms> = blocks.iter().map(|&b| scorer.anomaly(b)).collect();
    let stab_norm = min_max_normalize(&stab.iter().map(|t| t.s_stability).collect::<Vec<_>>());
    let anom_norm = min_max_normalize(&anom.iter().map(|t| t.s_anomaly).collect::<Vec<_>>());

    let mut candidates: Vec<ScoredBlock> = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (st, an) = (stab[i], anom[i]);
            let (sn, anorm) = (stab_norm[i], anom_norm[i]);
            ScoredBlock {
                s: b.s,
                e: b.e,
                z_gradient: st.z_gradient,
                z_growth: st.z_growth,
                t_transition: st.t_transition,
                z_rank: st.z_rank,
                z_change: an.z_change,
                z_sim: an.z_sim,
                z_var: an.z_var,
                s_stability: st.s_stability,
                s_anomaly: an.s_anomaly,
                stability_norm: sn,
                anomaly_norm: anorm,
                combined: sn.max(anorm),
                circuit_type: if sn >= anorm { CircuitType::Stability } else { CircuitType::Magnitude },
            }
        })
        .collect();

    let top_by = |key: fn(&ScoredBlock) -> f64| {
        candidates
            .iter()
            .min_by(|a, b| by_score_then_position((key(a), a.block()), (key(b), b.block())))
            .map(ScoredBlock::block)
            .expect("at least one candidate")
    };
    let top_stability = top_by(|c| c.s_stability);
    let top_anomaly = top_by(|c| c.s_anomaly);

    candidates.sort_by(|a, b| by_score_then_position((a.combined, a.block()), (b.combined, b.block())));

    Ok(RankedReport {
        model: stats.meta.model_id.clone(),
        n_layers: stats.n_layers,
        config,
        candidates,
        top_stability,
        top_anomaly,
    })
}
