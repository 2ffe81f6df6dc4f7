//! Memory-side emulation of split-Q flash attention.
//!
//! A trace is the ordered stream of global-memory tile transfers a launch
//! performs, assuming every resident CTA advances one KV step per wavefront
//! step. CTAs are visited in ascending order within a step; each one emits
//! its Q load when it starts a tile, one K and one V tile per step, and the
//! O store once its KV scan is done.
//!
//! Traces are produced lazily. Tile-granular events ([`TileAccess`]) are the
//! native unit; [`AccessTrace::sectors`] expands them into the sector stream.

pub mod dump;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    sectors_per_tile, validate, AttentionConfig, CacheModel, ScanOrder, ScheduleKind,
    SchedulePolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tensor {
    Q,
    K,
    V,
    O,
}

impl Tensor {
    pub const ALL: [Tensor; 4] = [Tensor::Q, Tensor::K, Tensor::V, Tensor::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(usize::from(index)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Tensor::Q => "q",
            Tensor::K => "k",
            Tensor::V => "v",
            Tensor::O => "o",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Read,
    Write,
}

/// One sector-sized global memory transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SectorAccess {
    pub tensor: Tensor,
    pub kind: AccessKind,
    pub cta: u32,
    pub wave: u64,
    pub sector_id: u64,
}

/// A whole tile moved by one CTA in one wavefront step. Its sectors are
/// contiguous and always transferred together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileAccess {
    pub tensor: Tensor,
    pub kind: AccessKind,
    pub cta: u32,
    pub wave: u64,
    /// Dense index of the (tensor, slice, tile) block.
    pub block: u64,
    pub first_sector: u64,
    pub sectors: u32,
}

impl TileAccess {
    pub fn sector_accesses(&self) -> impl Iterator<Item = SectorAccess> + '_ {
        (self.first_sector..self.first_sector + u64::from(self.sectors)).map(move |sector_id| {
            SectorAccess {
                tensor: self.tensor,
                kind: self.kind,
                cta: self.cta,
                wave: self.wave,
                sector_id,
            }
        })
    }
}

/// Flat sector address space: tensor-major, then (batch, head) slice, then
/// tile. Every tile starts on a sector boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressMap {
    slices: u64,
    tiles: u64,
    full_tile_sectors: u64,
    last_tile_sectors: u64,
    slice_sectors: u64,
}

impl AddressMap {
    pub fn new(config: &AttentionConfig, sector_bytes: u64) -> Self {
        let tiles = config.num_q_tiles();
        Self {
            slices: config.slices(),
            tiles,
            full_tile_sectors: sectors_per_tile(
                config.tile,
                config.head_dim,
                config.elem_bytes,
                sector_bytes,
            ),
            last_tile_sectors: config.tile_sectors(tiles - 1, sector_bytes),
            slice_sectors: config.slice_sectors(sector_bytes),
        }
    }

    pub fn tile_sectors(&self, tile: u64) -> u64 {
        if tile + 1 == self.tiles {
            self.last_tile_sectors
        } else {
            self.full_tile_sectors
        }
    }

    pub fn first_sector(&self, tensor: Tensor, slice: u64, tile: u64) -> u64 {
        (tensor.index() as u64 * self.slices + slice) * self.slice_sectors
            + tile * self.full_tile_sectors
    }

    pub fn block(&self, tensor: Tensor, slice: u64, tile: u64) -> u64 {
        (tensor.index() as u64 * self.slices + slice) * self.tiles + tile
    }

    pub fn slice_sectors(&self) -> u64 {
        self.slice_sectors
    }

    pub fn total_sectors(&self) -> u64 {
        4 * self.slices * self.slice_sectors
    }

    pub fn total_blocks(&self) -> u64 {
        4 * self.slices * self.tiles
    }

    /// Sectors of K tiles `0..=last` in one slice.
    fn prefix_sectors(&self, last: u64) -> u64 {
        if last + 1 == self.tiles {
            self.slice_sectors
        } else {
            (last + 1) * self.full_tile_sectors
        }
    }
}

/// A Q tile of one (batch, head) slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QTile {
    pub batch: u64,
    pub head: u64,
    pub index: u64,
}

impl QTile {
    fn from_linear(k: u64, config: &AttentionConfig) -> Self {
        let tiles = config.num_q_tiles();
        let slice = k / tiles;
        Self { batch: slice / config.heads, head: slice % config.heads, index: k % tiles }
    }

    pub fn slice(&self, heads: u64) -> u64 {
        self.batch * heads + self.head
    }
}

/// Ordered Q tiles owned by each CTA.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QTileAssignment {
    pub per_cta: Vec<Vec<QTile>>,
}

impl QTileAssignment {
    pub fn ctas(&self) -> usize {
        self.per_cta.len()
    }

    pub fn tiles(&self) -> usize {
        self.per_cta.iter().map(Vec::len).sum()
    }
}

/// Distributes the Q tiles of every slice over CTAs.
///
/// Tiles are linearized batch-major, then head, then tile index. For
/// `NonPersistent` there is one CTA per tile (CTA id = linear block index);
/// the wave structure of its dispatch is produced by the trace generator.
pub fn assign_q_tiles(
    config: &AttentionConfig,
    sched: &SchedulePolicy,
    n_sm: u32,
) -> Result<QTileAssignment> {
    let total = config.total_q_tiles();
    let grid = sched.resolved_grid(total, n_sm);
    if matches!(sched.kind, ScheduleKind::PersistentContiguous | ScheduleKind::TileStep2)
        && grid > total
    {
        return Err(Error::GridTooLarge { grid, tiles: total });
    }
    let tile = |k| QTile::from_linear(k, config);

    let per_cta = match sched.kind {
        ScheduleKind::PersistentRoundRobin => (0..grid)
            .map(|c| (c..total).step_by(grid as usize).map(tile).collect())
            .collect(),
        ScheduleKind::NonPersistent => (0..total).map(|k| vec![tile(k)]).collect(),
        ScheduleKind::PersistentContiguous => {
            let chunk = total.div_ceil(grid);
            (0..grid)
                .map(|c| {
                    let start = (c * chunk).min(total);
                    let end = ((c + 1) * chunk).min(total);
                    (start..end).map(tile).collect()
                })
                .collect()
        }
        ScheduleKind::TileStep2 => {
            let pairs = total.div_ceil(2);
            (0..grid)
                .map(|c| {
                    (c..pairs)
                        .step_by(grid as usize)
                        .flat_map(|p| (2 * p..(2 * p + 2).min(total)).map(tile))
                        .collect()
                })
                .collect()
        }
    };
    Ok(QTileAssignment { per_cta })
}

fn scans_forward(local_iter: u64, scan: ScanOrder) -> bool {
    match scan {
        ScanOrder::Cyclic => true,
        ScanOrder::Sawtooth => local_iter.is_multiple_of(2),
    }
}

/// KV tile indices visited by a CTA on its `local_iter`-th Q tile.
///
/// With a causal bound the scan covers `0..=causal_bound` only, and the
/// sawtooth reverses within that prefix.
pub fn kv_visit_order(
    local_iter: u64,
    n_kv: u64,
    scan: ScanOrder,
    causal_bound: Option<u64>,
) -> Vec<u64> {
    let end = causal_bound.map_or(n_kv, |b| (b + 1).min(n_kv));
    if scans_forward(local_iter, scan) {
        (0..end).collect()
    } else {
        (0..end).rev().collect()
    }
}

/// Sector totals per tensor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceTotals {
    pub q: u64,
    pub k: u64,
    pub v: u64,
    pub o: u64,
}

impl TraceTotals {
    pub fn total(&self) -> u64 {
        self.q + self.k + self.v + self.o
    }

    pub fn get(&self, tensor: Tensor) -> u64 {
        match tensor {
            Tensor::Q => self.q,
            Tensor::K => self.k,
            Tensor::V => self.v,
            Tensor::O => self.o,
        }
    }

    fn add(&mut self, tensor: Tensor, sectors: u64) {
        match tensor {
            Tensor::Q => self.q += sectors,
            Tensor::K => self.k += sectors,
            Tensor::V => self.v += sectors,
            Tensor::O => self.o += sectors,
        }
    }
}

/// Counts sectors per tensor by walking a tile stream.
pub fn trace_totals<I: IntoIterator<Item = TileAccess>>(tiles: I) -> TraceTotals {
    let mut totals = TraceTotals::default();
    for t in tiles {
        totals.add(t.tensor, u64::from(t.sectors));
    }
    totals
}

/// Counts sectors per tensor in a sector stream.
pub fn sector_totals<I: IntoIterator<Item = SectorAccess>>(sectors: I) -> TraceTotals {
    let mut totals = TraceTotals::default();
    for s in sectors {
        totals.add(s.tensor, 1);
    }
    totals
}

/// A fully resolved, deterministic trace description. Cheap to build; events
/// are generated on demand.
#[derive(Debug, Clone)]
pub struct AccessTrace {
    config: AttentionConfig,
    sector_bytes: u64,
    n_sm: u32,
    sched: SchedulePolicy,
    scan: ScanOrder,
    assignment: QTileAssignment,
    map: AddressMap,
}

impl AccessTrace {
    pub fn new(
        config: &AttentionConfig,
        cache: &CacheModel,
        sched: &SchedulePolicy,
        scan: ScanOrder,
    ) -> Result<Self> {
        validate(config, cache, sched)?;
        Ok(Self {
            config: *config,
            sector_bytes: cache.sector_bytes,
            n_sm: cache.n_sm,
            sched: *sched,
            scan,
            assignment: assign_q_tiles(config, sched, cache.n_sm)?,
            map: AddressMap::new(config, cache.sector_bytes),
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn schedule(&self) -> &SchedulePolicy {
        &self.sched
    }

    pub fn scan(&self) -> ScanOrder {
        self.scan
    }

    pub fn sector_bytes(&self) -> u64 {
        self.sector_bytes
    }

    pub fn assignment(&self) -> &QTileAssignment {
        &self.assignment
    }

    pub fn address_map(&self) -> &AddressMap {
        &self.map
    }

    pub fn tiles(&self) -> TileIter<'_> {
        TileIter::new(self)
    }

    pub fn sectors(&self) -> impl Iterator<Item = SectorAccess> + '_ {
        self.tiles().flat_map(|t| {
            (t.first_sector..t.first_sector + u64::from(t.sectors)).map(move |sector_id| {
                SectorAccess { tensor: t.tensor, kind: t.kind, cta: t.cta, wave: t.wave, sector_id }
            })
        })
    }

    /// Per-tensor sector totals in closed form, without generating events.
    pub fn expected_totals(&self) -> TraceTotals {
        let slices = self.config.slices();
        let tiles = self.config.num_q_tiles();
        let slice = self.map.slice_sectors();
        let kv_per_slice = if self.config.causal {
            (0..tiles).map(|i| self.map.prefix_sectors(i)).sum()
        } else {
            tiles * slice
        };
        TraceTotals {
            q: slices * slice,
            k: slices * kv_per_slice,
            v: slices * kv_per_slice,
            o: slices * slice,
        }
    }

    /// Fails when the sector-level trace would exceed `cap` events.
    pub fn check_cap(&self, cap: u64) -> Result<()> {
        let events = self.expected_totals().total();
        if events > cap {
            return Err(Error::TraceTooLarge { events, cap });
        }
        Ok(())
    }

    /// Sector stream collected into memory, subject to `cap`.
    pub fn materialize(&self, cap: u64) -> Result<Vec<SectorAccess>> {
        self.check_cap(cap)?;
        Ok(self.sectors().collect())
    }
}

#[derive(Debug, Clone, Copy)]
struct Running {
    tile: QTile,
    cta: u32,
    local_iter: u64,
    step: u64,
    visits: u64,
}

#[derive(Debug, Clone)]
struct Worker {
    /// Next position in this CTA's own list (persistent schedules).
    next: usize,
    /// Q tiles this worker has completed; the sawtooth parity source.
    done: u64,
    running: Option<Running>,
}

/// Lockstep wavefront generator over tile events.
pub struct TileIter<'a> {
    trace: &'a AccessTrace,
    workers: Vec<Worker>,
    cursor: usize,
    wave: u64,
    remaining: u64,
    /// Next linear block index handed to a free SM (non-persistent only).
    next_block: u64,
    pending: VecDeque<TileAccess>,
}

impl<'a> TileIter<'a> {
    fn new(trace: &'a AccessTrace) -> Self {
        let slots = match trace.sched.kind {
            ScheduleKind::NonPersistent => {
                (trace.assignment.ctas() as u64).min(u64::from(trace.n_sm)) as usize
            }
            _ => trace.assignment.ctas(),
        };
        Self {
            trace,
            workers: vec![Worker { next: 0, done: 0, running: None }; slots],
            cursor: 0,
            wave: 0,
            remaining: trace.assignment.tiles() as u64,
            next_block: 0,
            pending: VecDeque::with_capacity(4),
        }
    }

    fn emit(&mut self, tensor: Tensor, kind: AccessKind, cta: u32, tile: &QTile, index: u64) {
        let map = &self.trace.map;
        let slice = tile.slice(self.trace.config.heads);
        self.pending.push_back(TileAccess {
            tensor,
            kind,
            cta,
            wave: self.wave,
            block: map.block(tensor, slice, index),
            first_sector: map.first_sector(tensor, slice, index),
            sectors: map.tile_sectors(index) as u32,
        });
    }

    fn acquire(&mut self, slot: usize) -> Option<Running> {
        let trace = self.trace;
        let (tile, cta, local_iter) = match trace.sched.kind {
            ScheduleKind::NonPersistent => {
                if self.next_block >= trace.assignment.ctas() as u64 {
                    return None;
                }
                let block = self.next_block;
                self.next_block += 1;
                (trace.assignment.per_cta[block as usize][0], block as u32, 0)
            }
            _ => {
                let w = &mut self.workers[slot];
                let tile = *trace.assignment.per_cta[slot].get(w.next)?;
                w.next += 1;
                (tile, slot as u32, w.done)
            }
        };
        let n_kv = trace.config.num_q_tiles();
        let visits = if trace.config.causal { tile.index + 1 } else { n_kv };
        Some(Running { tile, cta, local_iter, step: 0, visits })
    }

    fn advance(&mut self, slot: usize) {
        let mut run = match self.workers[slot].running {
            Some(run) => run,
            None => match self.acquire(slot) {
                Some(run) => {
                    self.emit(Tensor::Q, AccessKind::Read, run.cta, &run.tile, run.tile.index);
                    run
                }
                None => return,
            },
        };
        let j = if scans_forward(run.local_iter, self.trace.scan) {
            run.step
        } else {
            run.visits - 1 - run.step
        };
        self.emit(Tensor::K, AccessKind::Read, run.cta, &run.tile, j);
        self.emit(Tensor::V, AccessKind::Read, run.cta, &run.tile, j);
        run.step += 1;
        let w = &mut self.workers[slot];
        if run.step == run.visits {
            w.running = None;
            w.done += 1;
            self.remaining -= 1;
            self.emit(Tensor::O, AccessKind::Write, run.cta, &run.tile, run.tile.index);
        } else {
            w.running = Some(run);
        }
    }
}

impl Iterator for TileIter<'_> {
    type Item = TileAccess;

    fn next(&mut self) -> Option<TileAccess> {
        loop {
            if let Some(event) = self.pending.pop_front() {
                return Some(event);
            }
            if self.cursor == self.workers.len() {
                if self.remaining == 0 {
                    return None;
                }
                self.cursor = 0;
                self.wave += 1;
            }
            let slot = self.cursor;
            self.cursor += 1;
            self.advance(slot);
        }
    }
}
