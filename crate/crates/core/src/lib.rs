//! Trace-driven L2 cache laboratory for tiled flash-attention kernels.
//!
//! The crate turns an attention workload shape, a CTA schedule and a KV scan
//! order into a deterministic global-memory access trace, replays it through
//! an L2 sector cache model, and compares the result with closed-form sector
//! and cold-miss models. Stack-distance histograms serve as an independent
//! oracle for the simulator.
//!
//! ```
//! use wavecache::prelude::*;
//!
//! let config = AttentionConfig { seq_len: 8 * 80, ..Default::default() };
//! let cache = CacheModel::default();
//! let trace = AccessTrace::new(&config, &cache, &SchedulePolicy::default(), ScanOrder::Sawtooth)?;
//! let stats = simulate(&trace, &cache, SimFidelity::TileBlock)?;
//! assert_eq!(stats.total.compulsory_misses, cold_sectors(640, 64, 2, 32));
//! # Ok::<(), wavecache::Error>(())
//! ```

pub mod analytic;
pub mod cachesim;
pub mod error;
pub mod experiment;
pub mod model;
pub mod rdist;
pub mod tracegen;

pub use error::{Error, Result, ValidationErrors};

pub mod prelude {
    pub use crate::analytic::{
        cold_sectors, divergence_length, hit_rate_model, mape, sectors_causal_approx,
        sectors_noncausal_approx, DivergenceEstimate, ModelPrediction,
    };
    pub use crate::cachesim::{
        classify, simulate, simulate_sectors, simulate_with, CacheStats, Counters,
        ReductionReport, SimFidelity, SimOptions,
    };
    pub use crate::model::{
        kv_bytes, sectors_per_tile, total_kv_bytes, validate, Associativity, AttentionConfig,
        CacheModel, ScanOrder, ScheduleKind, SchedulePolicy,
    };
    pub use crate::rdist::{stack_distances, stack_distances_naive, DistanceHistogram};
    pub use crate::tracegen::{
        assign_q_tiles, kv_visit_order, trace_totals, AccessKind, AccessTrace, QTile,
        QTileAssignment, SectorAccess, Tensor, TileAccess, TraceTotals,
    };
}
