//! Closed-form sector models and the MAPE statistic used to score them.
//!
//! The models treat `S/T` as a real number, ignoring the trailing partial
//! tile, so their values stay fractional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CacheModel;

/// Ratio between the observed divergence onset (20 MiB of KV) and the
/// 24 MiB L2 it was measured on.
pub const OBSERVED_ONSET_RATIO: f64 = 20.0 / 24.0;

/// Predicted L2 sector count split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    /// Q loads plus O stores.
    pub qo: f64,
    /// K plus V loads.
    pub kv: f64,
}

impl ModelPrediction {
    pub fn sectors(&self) -> f64 {
        self.qo + self.kv
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { qo: self.qo * factor, kv: self.kv * factor }
    }
}

fn per_tensor(s: u64, d: u64, e: u64, c: u64) -> f64 {
    (s * d * e) as f64 / c as f64
}

/// `M = 2·(SDE/C + S²DE/(TC))`, i.e. `8S(1 + S/T)` for D=64, E=2, C=32.
pub fn sectors_noncausal_approx(s: u64, d: u64, e: u64, c: u64, t: u64) -> ModelPrediction {
    let footprint = per_tensor(s, d, e, c);
    ModelPrediction { qo: 2.0 * footprint, kv: 2.0 * footprint * s as f64 / t as f64 }
}

/// Causal variant: with `n = S/T` tiles, K and V are each read
/// `n(n−1)/2` tile-times, giving `8S(S/(2T) + 1/2)` under the defaults.
pub fn sectors_causal_approx(s: u64, d: u64, e: u64, c: u64, t: u64) -> ModelPrediction {
    let footprint = per_tensor(s, d, e, c);
    ModelPrediction { qo: 2.0 * footprint, kv: footprint * (s as f64 / t as f64 - 1.0) }
}

/// Cold misses when all four tensors are touched once: `4·SDE/C`.
pub fn cold_sectors(s: u64, d: u64, e: u64, c: u64) -> u64 {
    4 * (s * d * e).div_ceil(c)
}

/// L2 hit-rate factor of `n_sm` CTAs sharing each streamed KV tile.
pub fn hit_rate_model(n_sm: u32) -> f64 {
    1.0 - 1.0 / f64::from(n_sm)
}

/// Sequence lengths around which KV stops fitting in L2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    /// `S*` with `2·S*·D·E = capacity`; no reuse can be lost below it.
    pub capacity_bound: f64,
    /// `capacity_bound` scaled by the observed 20/24 onset ratio.
    pub expected_onset: f64,
    /// Capacity left after one wavefront of Q, K, V and O tiles across all
    /// SMs, expressed as a sequence length. Needs the tile size.
    pub overhead_adjusted: Option<f64>,
}

pub fn divergence_length(
    cache: &CacheModel,
    head_dim: u64,
    elem_bytes: u64,
    tile: Option<u64>,
) -> DivergenceEstimate {
    let per_row = 2.0 * (head_dim * elem_bytes) as f64;
    let capacity = cache.capacity_bytes as f64;
    let capacity_bound = capacity / per_row;
    let overhead_adjusted = tile.map(|t| {
        let resident = 4.0 * f64::from(cache.n_sm) * (t * head_dim * elem_bytes) as f64;
        ((capacity - resident) / per_row).max(0.0)
    });
    DivergenceEstimate {
        capacity_bound,
        expected_onset: capacity_bound * OBSERVED_ONSET_RATIO,
        overhead_adjusted,
    }
}

/// Mean absolute percentage error over `(observed, predicted)` pairs.
pub fn mape(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut sum = 0.0;
    for (index, &(observed, predicted)) in pairs.iter().enumerate() {
        if observed <= 0.0 || observed.is_nan() {
            return Err(Error::NonPositiveObservation { index, value: observed });
        }
        sum += (observed - predicted).abs() / observed;
    }
    Ok(100.0 * sum / pairs.len() as f64)
}
