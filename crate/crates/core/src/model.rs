//! Workload and machine parameters.
//!
//! Everything here is an immutable value type. Defaults reproduce the GB10
//! setup: 48 SMs, a 24 MiB L2 with 32-byte sectors, fp16 elements, head
//! dimension 64 and 80x80 square tiles.

use serde::{Deserialize, Serialize};

use crate::error::ValidationErrors;

pub const DEFAULT_SECTOR_BYTES: u64 = 32;
pub const DEFAULT_L2_BYTES: u64 = 24 * 1024 * 1024;
pub const DEFAULT_SM_COUNT: u32 = 48;

/// Shape of one attention launch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub seq_len: u64,
    pub head_dim: u64,
    /// Rows (and columns) of a square Q/KV tile.
    pub tile: u64,
    pub elem_bytes: u64,
    pub batch: u64,
    pub heads: u64,
    pub causal: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            seq_len: 32_768,
            head_dim: 64,
            tile: 80,
            elem_bytes: 2,
            batch: 1,
            heads: 1,
            causal: false,
        }
    }
}

impl AttentionConfig {
    pub fn with_seq_len(mut self, seq_len: u64) -> Self {
        self.seq_len = seq_len;
        self
    }

    /// Q tiles per (batch, head) slice, counting the trailing partial tile.
    pub fn num_q_tiles(&self) -> u64 {
        self.seq_len.div_ceil(self.tile)
    }

    /// Rows held by the last tile of a slice, in `1..=tile`.
    pub fn trailing_rows(&self) -> u64 {
        self.seq_len - (self.num_q_tiles() - 1) * self.tile
    }

    /// Number of (batch, head) slices.
    pub fn slices(&self) -> u64 {
        self.batch * self.heads
    }

    /// Q tiles across every slice; the work list a scheduler distributes.
    pub fn total_q_tiles(&self) -> u64 {
        self.slices() * self.num_q_tiles()
    }

    pub fn row_bytes(&self) -> u64 {
        self.head_dim * self.elem_bytes
    }

    /// Rows covered by tile `index` of a slice.
    pub fn tile_rows(&self, index: u64) -> u64 {
        if index + 1 == self.num_q_tiles() {
            self.trailing_rows()
        } else {
            self.tile
        }
    }

    /// Sectors read or written when tile `index` of one tensor is moved.
    pub fn tile_sectors(&self, index: u64, sector_bytes: u64) -> u64 {
        sectors_per_tile(self.tile_rows(index), self.head_dim, self.elem_bytes, sector_bytes)
    }

    /// Sector footprint of one tensor in one slice. Tiles start on sector
    /// boundaries, so this equals `S·D·E/C` whenever every tile's byte size
    /// is a whole number of sectors.
    pub fn slice_sectors(&self, sector_bytes: u64) -> u64 {
        let n = self.num_q_tiles();
        (n - 1) * sectors_per_tile(self.tile, self.head_dim, self.elem_bytes, sector_bytes)
            + self.tile_sectors(n - 1, sector_bytes)
    }
}

/// `⌈T·D·E / C⌉`: sectors covered by a `rows × head_dim` tile.
pub fn sectors_per_tile(rows: u64, head_dim: u64, elem_bytes: u64, sector_bytes: u64) -> u64 {
    (rows * head_dim * elem_bytes).div_ceil(sector_bytes)
}

/// K plus V bytes of one (batch, head) slice.
pub fn kv_bytes(config: &AttentionConfig) -> u64 {
    2 * config.seq_len * config.head_dim * config.elem_bytes
}

/// K plus V bytes across all slices.
pub fn total_kv_bytes(config: &AttentionConfig) -> u64 {
    kv_bytes(config) * config.slices()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Associativity {
    Full,
    Ways(u32),
}

/// L2 geometry plus the number of SMs feeding it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheModel {
    pub sector_bytes: u64,
    pub capacity_bytes: u64,
    pub associativity: Associativity,
    pub n_sm: u32,
}

impl Default for CacheModel {
    fn default() -> Self {
        Self {
            sector_bytes: DEFAULT_SECTOR_BYTES,
            capacity_bytes: DEFAULT_L2_BYTES,
            associativity: Associativity::Full,
            n_sm: DEFAULT_SM_COUNT,
        }
    }
}

impl CacheModel {
    pub fn capacity_sectors(&self) -> u64 {
        self.capacity_bytes / self.sector_bytes
    }

    /// Set count for a set-associative geometry, `None` when fully associative.
    pub fn sets(&self) -> Option<u64> {
        match self.associativity {
            Associativity::Full => None,
            Associativity::Ways(k) => Some(self.capacity_sectors() / u64::from(k)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// One CTA per SM, grid-stride loop over Q tiles.
    PersistentRoundRobin,
    /// One CTA per Q tile, dispatched by the hardware as SMs free up.
    NonPersistent,
    /// One CTA per SM, each owning a contiguous run of Q tiles.
    PersistentContiguous,
    /// Grid-stride loop over pairs of adjacent Q tiles.
    TileStep2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulePolicy {
    pub kind: ScheduleKind,
    /// Explicit grid size; `None` picks the policy's natural default.
    pub grid_size: Option<u64>,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        Self::new(ScheduleKind::PersistentRoundRobin)
    }
}

impl SchedulePolicy {
    pub fn new(kind: ScheduleKind) -> Self {
        Self { kind, grid_size: None }
    }

    /// Number of CTAs launched for `total_tiles` Q tiles on `n_sm` SMs.
    pub fn resolved_grid(&self, total_tiles: u64, n_sm: u32) -> u64 {
        let n_sm = u64::from(n_sm);
        match self.kind {
            ScheduleKind::PersistentRoundRobin => {
                total_tiles.min(self.grid_size.unwrap_or(n_sm))
            }
            ScheduleKind::NonPersistent => total_tiles,
            ScheduleKind::PersistentContiguous => {
                self.grid_size.unwrap_or_else(|| total_tiles.min(n_sm))
            }
            ScheduleKind::TileStep2 => {
                self.grid_size.unwrap_or_else(|| total_tiles.div_ceil(2).min(n_sm))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanOrder {
    #[default]
    Cyclic,
    Sawtooth,
}

/// Checks every invariant and reports all of the violations together.
pub fn validate(
    config: &AttentionConfig,
    cache: &CacheModel,
    sched: &SchedulePolicy,
) -> Result<(), ValidationErrors> {
    let mut errors = Vec::new();

    if config.tile == 0 || config.seq_len < config.tile {
        errors.push("S ≥ T ≥ 1 violated".to_string());
    }
    if config.head_dim == 0 {
        errors.push("D ≥ 1 violated".to_string());
    }
    if !matches!(config.elem_bytes, 1 | 2 | 4) {
        errors.push(format!("E ∈ {{1, 2, 4}} violated (E = {})", config.elem_bytes));
    }
    if config.batch == 0 {
        errors.push("B ≥ 1 violated".to_string());
    }
    if config.heads == 0 {
        errors.push("H ≥ 1 violated".to_string());
    }

    if cache.sector_bytes == 0 {
        errors.push("sector size must be positive".to_string());
    } else {
        if !cache.capacity_bytes.is_multiple_of(cache.sector_bytes) {
            errors.push(format!(
                "capacity multiple of sector violated ({} % {} != 0)",
                cache.capacity_bytes, cache.sector_bytes
            ));
        }
        if let Associativity::Ways(k) = cache.associativity {
            if k == 0 {
                errors.push("associativity must be at least 1 way".to_string());
            } else if !cache.capacity_bytes.is_multiple_of(cache.sector_bytes * u64::from(k)) {
                errors.push(format!(
                    "capacity must hold a whole number of {k}-way sets"
                ));
            }
        }
    }
    if cache.n_sm == 0 {
        errors.push("SM count must be positive".to_string());
    }

    if sched.grid_size == Some(0) {
        errors.push("grid size must be positive".to_string());
    }
    let config_ok = config.tile > 0 && config.seq_len >= config.tile;
    if config_ok && config.batch > 0 && config.heads > 0 {
        let tiles = config.total_q_tiles();
        if let (ScheduleKind::PersistentContiguous | ScheduleKind::TileStep2, Some(g)) =
            (sched.kind, sched.grid_size)
        {
            if g > tiles {
                errors.push(format!("grid size {g} exceeds {tiles} Q tiles"));
            }
        }
    }

    if errors.is_empty() {
        Ok(())
    } else {
        Err(ValidationErrors(errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ok_parts() -> (AttentionConfig, CacheModel, SchedulePolicy) {
        (AttentionConfig::default(), CacheModel::default(), SchedulePolicy::default())
    }

    #[test]
    fn figure_configuration_is_valid() {
        let (c, m, s) = ok_parts();
        assert!(validate(&c, &m, &s).is_ok());
    }

    #[test]
    fn zero_sequence_is_rejected() {
        let (mut c, m, s) = ok_parts();
        c.seq_len = 0;
        let err = validate(&c, &m, &s).unwrap_err();
        assert!(err.contains("S ≥ T ≥ 1 violated"));
    }

    #[test]
    fn capacity_must_be_whole_sectors() {
        let (c, mut m, s) = ok_parts();
        m.capacity_bytes = 100;
        let err = validate(&c, &m, &s).unwrap_err();
        assert!(err.contains("capacity multiple of sector"));
    }

    #[test]
    fn errors_are_aggregated() {
        let (mut c, mut m, s) = ok_parts();
        c.seq_len = 0;
        c.elem_bytes = 3;
        c.batch = 0;
        m.capacity_bytes = 100;
        m.n_sm = 0;
        let err = validate(&c, &m, &s).unwrap_err();
        assert_eq!(err.messages().len(), 5, "{err}");
    }

    #[test]
    fn set_count_must_be_whole() {
        let (c, mut m, s) = ok_parts();
        m.capacity_bytes = 32 * 24;
        m.associativity = Associativity::Ways(16);
        assert!(validate(&c, &m, &s).unwrap_err().contains("16-way"));
        m.associativity = Associativity::Ways(8);
        assert!(validate(&c, &m, &s).is_ok());
    }

    #[test]
    fn contiguous_grid_cannot_exceed_tiles() {
        let (mut c, m, _) = ok_parts();
        c.seq_len = 160;
        let s = SchedulePolicy { kind: ScheduleKind::PersistentContiguous, grid_size: Some(3) };
        assert!(validate(&c, &m, &s).is_err());
    }

    #[test]
    fn sector_counts() {
        assert_eq!(sectors_per_tile(80, 64, 2, 32), 320);
        assert_eq!(sectors_per_tile(48, 64, 2, 32), 192);
        // 2 rows of 8 fp16 elements fill one 32-byte sector exactly.
        assert_eq!(sectors_per_tile(2, 8, 2, 32), 1);
        assert_eq!(sectors_per_tile(1, 1, 1, 32), 1);
    }

    #[test]
    fn kv_footprints() {
        let c = AttentionConfig::default();
        assert_eq!(kv_bytes(&c.with_seq_len(81_920)), 20 * 1024 * 1024);
        assert_eq!(kv_bytes(&c.with_seq_len(98_304)), DEFAULT_L2_BYTES);
        let tiny = AttentionConfig { seq_len: 1, head_dim: 1, tile: 1, elem_bytes: 1, ..c };
        assert_eq!(kv_bytes(&tiny), 2);
        let multi = AttentionConfig { batch: 2, heads: 3, ..c };
        assert_eq!(total_kv_bytes(&multi), 6 * kv_bytes(&c));
    }

    #[test]
    fn derived_tiles_at_32k() {
        let c = AttentionConfig::default();
        assert_eq!(c.num_q_tiles(), 410);
        assert_eq!(c.trailing_rows(), 48);
        assert_eq!(c.slice_sectors(32), 131_072);
    }

    #[test]
    fn round_robin_grid_is_clamped() {
        let s = SchedulePolicy::default();
        assert_eq!(s.resolved_grid(410, 48), 48);
        assert_eq!(s.resolved_grid(20, 48), 20);
    }

    proptest! {
        #[test]
        fn tile_count_brackets_sequence(s in 1u64..100_000, t in 1u64..512) {
            prop_assume!(s >= t);
            let c = AttentionConfig { seq_len: s, tile: t, ..Default::default() };
            let n = c.num_q_tiles();
            prop_assert!(n * t >= s && s > (n - 1) * t);
            prop_assert!((1..=t).contains(&c.trailing_rows()));
        }

        #[test]
        fn sectors_monotone(t in 1u64..256, d in 1u64..256, e in prop::sample::select(vec![1u64, 2, 4]), c in 1u64..128) {
            let base = sectors_per_tile(t, d, e, c);
            prop_assert!(sectors_per_tile(t + 1, d, e, c) >= base);
            prop_assert!(sectors_per_tile(t, d + 1, e, c) >= base);
            prop_assert!(sectors_per_tile(t, d, e * 2, c) >= base);
            prop_assert!(sectors_per_tile(t, d, e, c + 1) <= base);
        }

        #[test]
        fn kv_bytes_linear(s in 1u64..1_000_000, d in 1u64..512, k in 1u64..8) {
            let c = AttentionConfig { seq_len: s, head_dim: d, tile: 1, ..Default::default() };
            let scaled = AttentionConfig { seq_len: s * k, ..c };
            prop_assert_eq!(kv_bytes(&scaled), k * kv_bytes(&c));
            let wider = AttentionConfig { head_dim: d * k, ..c };
            prop_assert_eq!(kv_bytes(&wider), k * kv_bytes(&c));
        }
    }
}
