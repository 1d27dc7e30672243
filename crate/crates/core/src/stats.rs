//! Per-layer residual-stream statistics.
//!
//! All reductions run in f64 in a fixed order (examples ascending, then dims), so a given
//! trace always yields the same table bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svd::{self, SvdError};
use crate::trace::{TraceMeta, TraceSet};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-9;

pub const WARN_SINGLE_EXAMPLE: &str = "cross_var: single calibration example, cross-example variance reported as zeros";

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("effective rank, layer {layer}: {source}")]
    Svd {
        layer: usize,
        #[source]
        source: SvdError,
    },
    #[error("need at least 2 layers, got {0}")]
    TooFewLayers(usize),
    #[error("{field} has length {actual}, expected n_layers = {expected}")]
    Length { field: &'static str, expected: usize, actual: usize },
    #[error("stats JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStatsTable {
    pub n_layers: usize,
    pub change_mean: Vec<f64>,
    pub change_std: Vec<f64>,
    pub self_sim_mean: Vec<f64>,
    pub growth_mean: Vec<f64>,
    pub cross_var: Vec<f64>,
    pub eff_rank: Vec<f64>,
    pub change_deriv: Vec<f64>,
    pub meta: TraceMeta,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl LayerStatsTable {
    /// Checks that each per-layer series has exactly `n_layers` entries.
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.n_layers < 2 {
            return Err(StatsError::TooFewLayers(self.n_layers));
        }
        for (field, series) in self.series() {
            if series.len() != self.n_layers {
                return Err(StatsError::Length { field, expected: self.n_layers, actual: series.len() });
            }
        }
        Ok(())
    }

    pub fn series(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("change_mean", &self.change_mean),
            ("change_std", &self.change_std),
            ("self_sim_mean", &self.self_sim_mean),
            ("growth_mean", &self.growth_mean),
            ("cross_var", &self.cross_var),
            ("eff_rank", &self.eff_rank),
            ("change_deriv", &self.change_deriv),
        ]
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(y) - f64::from(x);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population std over examples of `||h_{i+1} - h_i||`.
pub fn change_magnitude(trace: &TraceSet) -> (Vec<f64>, Vec<f64>) {
    let mut per_example = Vec::with_capacity(trace.n_examples());
    (0..trace.n_layers())
        .map(|layer| {
            per_example.clear();
            per_example.extend((0..trace.n_examples()).map(|n| {
                let (input, output) = trace.layer_io(n, layer);
                diff_norm(input, output)
            }));
            mean_std(&per_example)
        })
        .unzip()
}

/// Mean cosine between layer input and output. A zero vector gives cosine 0.
pub fn self_similarity(trace: &TraceSet) -> Vec<f64> {
    per_layer_mean(trace, |input, output| {
        let denom = norm(input) * norm(output);
        if denom == 0.0 {
            0.0
        } else {
            (dot(input, output) / denom).clamp(-1.0, 1.0)
        }
    })
}

/// Mean of `||h_{i+1}|| / ||h_i||`. A zero input norm contributes ratio 1.
pub fn norm_growth(trace: &TraceSet) -> Vec<f64> {
    per_layer_mean(trace, |input, output| {
        let denom = norm(input);
        if denom == 0.0 {
            1.0
        } else {
            norm(output) / denom
        }
    })
}

fn per_layer_mean(trace: &TraceSet, f: impl Fn(&[f32], &[f32]) -> f64) -> Vec<f64> {
    let n = trace.n_examples() as f64;
    (0..trace.n_layers())
        .map(|layer| {
            (0..trace.n_examples())
                .map(|ex| {
                    let (input, output) = trace.layer_io(ex, layer);
                    f(input, output)
                })
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Per-dimension population variance of each layer's output across examples, averaged
/// over dimensions.
pub fn cross_example_variance(trace: &TraceSet) -> Vec<f64> {
    let n = trace.n_examples();
    let d = trace.hidden_dim();
    if n < 2 {
        return vec![0.0; trace.n_layers()];
    }
    let mut mean = vec![0.0f64; d];
    (0..trace.n_layers())
        .map(|layer| {
            mean.iter_mut().for_each(|m| *m = 0.0);
            for ex in 0..n {
                for (m, &x) in mean.iter_mut().zip(trace.hidden(ex, layer + 1)) {
                    *m += f64::from(x);
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut total = 0.0;
            for ex in 0..n {
                for (m, &x) in mean.iter().zip(trace.hidden(ex, layer + 1)) {
                    let dev = f64::from(x) - m;
                    total += dev * dev;
                }
            }
            total / n as f64 / d as f64
        })
        .collect()
}

/// `exp` of the Shannon entropy of the sum-normalized singular values.
///
/// Returns 0 for an all-zero matrix.
pub fn entropy_rank(singular_values: &[f64]) -> f64 {
    let max = singular_values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    let cutoff = RANK_CUTOFF * max;
    let kept: Vec<f64> = singular_values.iter().copied().filter(|&s| s > cutoff).collect();
    let total: f64 = kept.iter().sum();
    let entropy: f64 = kept
        .iter()
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    entropy.exp()
}

/// Effective rank of the N x d matrix of change vectors `h_{i+1} - h_i` at each layer.
pub fn effective_rank(trace: &TraceSet) -> Result<Vec<f64>, StatsError> {
    let n = trace.n_examples();
    let d = trace.hidden_dim();
    let mut changes = vec![0.0f64; n * d];
    (0..trace.n_layers())
        .map(|layer| {
            for ex in 0..n {
                let (input, output) = trace.layer_io(ex, layer);
                for (k, (&x, &y)) in input.iter().zip(output).enumerate() {
                    changes[ex * d + k] = f64::from(y) - f64::from(x);
                }
            }
            let sv = svd::singular_values(&changes, n, d).map_err(|source| StatsError::Svd { layer, source })?;
            Ok(entropy_rank(&sv))
        })
        .collect()
}

/// `|change_mean[i] - change_mean[i-1]|`, with the first entry copied from the second.
pub fn change_derivative(change_mean: &[f64]) -> Result<Vec<f64>, StatsError> {
    if change_mean.len() < 2 {
        return Err(StatsError::TooFewLayers(change_mean.len()));
    }
    let mut deriv: Vec<f64> = Vec::with_capacity(change_mean.len());
    deriv.push(0.0);
    deriv.extend(change_mean.windows(2).map(|w| (w[1] - w[0]).abs()));
    deriv[0] = deriv[1];
    Ok(deriv)
}

pub fn compute_all(trace: &TraceSet) -> Result<LayerStatsTable, StatsError> {
    let (change_mean, change_std) = change_magnitude(trace);
    let change_deriv = change_derivative(&change_mean)?;
    let mut warnings = Vec::new();
    if trace.n_examples() < 2 {
        warnings.push(WARN_SINGLE_EXAMPLE.to_string());
    }
    Ok(LayerStatsTable {
        n_layers: trace.n_layers(),
        self_sim_mean: self_similarity(trace),
        growth_mean: norm_growth(trace),
        cross_var: cross_example_variance(trace),
        eff_rank: effective_rank(trace)?,
        change_mean,
        change_std,
        change_deriv,
        meta: trace.meta().clone(),
        warnings,
    })
}

/// Writes the table as pretty JSON with round-trip-exact floats.
pub fn write_stats<W: Write>(stats: &LayerStatsTable, mut dest: W) -> Result<u64, StatsError> {
    stats.validate()?;
    let mut bytes = serde_json::to_vec_pretty(stats)?;
    bytes.push(b'\n');
    dest.write_all(&bytes)?;
    dest.flush()?;
    Ok(bytes.len() as u64)
}

pub fn read_stats<R: Read>(src: R) -> Result<LayerStatsTable, StatsError> {
    let stats: LayerStatsTable = serde_json::from_reader(src)?;
    stats.validate()?;
    Ok(stats)
}
