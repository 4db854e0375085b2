//! Tile coding of the continuous (EMG, joint angle) observation into sparse
//! binary features.
//!
//! Each tiling is a regular grid with one extra tile per dimension, displaced
//! by a fraction of a tile width. Tiling `k` occupies the contiguous index
//! block `[k * block, (k + 1) * block)`, so active indices are strictly
//! increasing in tiling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileCoderConfig {
    pub num_tilings: usize,
    pub tiles_per_dim: Vec<usize>,
    pub bounds_per_dim: Vec<(f64, f64)>,
    pub memory_size: usize,
    pub seed: u64,
    /// Draw per-tiling offsets from `seed` instead of the uniform `k / m` stagger.
    pub random_offsets: bool,
}

impl Default for TileCoderConfig {
    fn default() -> Self {
        Self {
            num_tilings: 8,
            tiles_per_dim: vec![8, 8],
            bounds_per_dim: vec![(0.0, 1.0), (0.0349, 1.5446)],
            memory_size: 8 * 9 * 9,
            seed: 42,
            random_offsets: false,
        }
    }
}

impl TileCoderConfig {
    /// Features per tiling: the product of `tiles + 1` over dimensions.
    pub fn block_size(&self) -> usize {
        self.tiles_per_dim.iter().map(|t| t + 1).product()
    }

    pub fn min_memory_size(&self) -> usize {
        self.num_tilings * self.block_size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tilings == 0 {
            return config_err("coder.num_tilings must be at least 1");
        }
        if self.tiles_per_dim.is_empty() {
            return config_err("coder.tiles_per_dim must name at least one dimension");
        }
        if self.tiles_per_dim.len() != self.bounds_per_dim.len() {
            return config_err(format!(
                "coder.tiles_per_dim has {} dimensions but coder.bounds_per_dim has {}",
                self.tiles_per_dim.len(),
                self.bounds_per_dim.len()
            ));
        }
        if self.tiles_per_dim.contains(&0) {
            return config_err("coder.tiles_per_dim entries must be at least 1");
        }
        for (d, &(lo, hi)) in self.bounds_per_dim.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return config_err(format!("coder.bounds_per_dim[{d}] needs low < high, got ({lo}, {hi})"));
            }
        }
        if self.memory_size < self.min_memory_size() {
            return config_err(format!(
                "coder.memory_size {} is below the {} features the tilings need",
                self.memory_size,
                self.min_memory_size()
            ));
        }
        Ok(())
    }
}

/// Sparse binary feature vector: the indices of the active tiles, one per tiling.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    active: Vec<usize>,
}

impl FeatureVector {
    pub fn new(active: Vec<usize>) -> Self {
        Self { active }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// `w^T x` for binary `x`: the sum of `w` over the active indices.
    #[inline]
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.active.iter().map(|&i| weights[i]).sum()
    }

    pub fn overlap(&self, other: &FeatureVector) -> usize {
        self.active.iter().filter(|i| other.active.contains(i)).count()
    }
}

#[derive(Debug, Clone)]
pub struct TileCoder {
    config: TileCoderConfig,
    widths: Vec<f64>,
    // offsets[k][d], in units of one tile width, within [0, 1)
    offsets: Vec<Vec<f64>>,
    block: usize,
}

impl TileCoder {
    pub fn new(config: TileCoderConfig) -> Result<Self> {
        config.validate()?;
        let dims = config.tiles_per_dim.len();
        let widths = config
            .tiles_per_dim
            .iter()
            .zip(&config.bounds_per_dim)
            .map(|(&t, &(lo, hi))| (hi - lo) / t as f64)
            .collect();
        let m = config.num_tilings;
        let offsets = if config.random_offsets {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            (0..m)
                .map(|k| if k == 0 { vec![0.0; dims] } else { (0..dims).map(|_| rng.gen::<f64>()).collect() })
                .collect()
        } else {
            (0..m).map(|k| vec![k as f64 / m as f64; dims]).collect()
        };
        let block = config.block_size();
        Ok(Self { config, widths, offsets, block })
    }

    pub fn config(&self) -> &TileCoderConfig {
        &self.config
    }

    pub fn num_tilings(&self) -> usize {
        self.config.num_tilings
    }

    pub fn memory_size(&self) -> usize {
        self.config.memory_size
    }

    pub fn offsets(&self) -> &[Vec<f64>] {
        &self.offsets
    }

    /// Encodes one state. Components outside the configured bounds are clamped.
    pub fn encode(&self, state: &[f64]) -> Result<FeatureVector> {
        let dims = self.widths.len();
        if state.len() != dims {
            return Err(Error::Config(format!("state has {} components, coder expects {dims}", state.len())));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tile coder input"));
        }
        let scaled: Vec<f64> = state
            .iter()
            .zip(&self.config.bounds_per_dim)
            .zip(&self.widths)
            .map(|((&v, &(lo, hi)), &w)| (v.clamp(lo, hi) - lo) / w)
            .collect();

        let active = self
            .offsets
            .iter()
            .enumerate()
            .map(|(k, off)| {
                let mut index = 0;
                let mut stride = 1;
                for d in 0..dims {
                    let tiles = self.config.tiles_per_dim[d];
                    let coord = ((scaled[d] + off[d]).floor() as usize).min(tiles);
                    index += coord * stride;
                    stride *= tiles + 1;
                }
                k * self.block + index
            })
            .collect();
        Ok(FeatureVector { active })
    }

    /// Convenience for the two-dimensional (emg, angle) observation.
    pub fn encode_obs(&self, emg: f64, angle: f64) -> Result<FeatureVector> {
        self.encode(&[emg, angle])
    }
}
