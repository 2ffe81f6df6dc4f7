//! Trace-driven L2 sector cache.
//!
//! Fully-associative LRU is exact at sector granularity. The tile-block
//! fidelity keeps one LRU entry per tile weighted by its sector count; on a
//! trace where each tile's sectors are always touched together and in the
//! same order, every sector of a tile has the same stack distance, so both
//! fidelities produce identical statistics.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Associativity, CacheModel};
use crate::tracegen::{AccessTrace, SectorAccess, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimFidelity {
    #[default]
    SectorExact,
    TileBlock,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub compulsory_misses: u64,
    pub non_compulsory_misses: u64,
}

impl Counters {
    pub fn hit_rate(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses as f64
        }
    }

    fn record(&mut self, sectors: u64, outcome: Outcome) {
        self.accesses += sectors;
        match outcome {
            Outcome::Hit => self.hits += sectors,
            Outcome::ColdMiss => {
                self.misses += sectors;
                self.compulsory_misses += sectors;
            }
            Outcome::Miss => {
                self.misses += sectors;
                self.non_compulsory_misses += sectors;
            }
        }
    }
}

impl std::ops::Add for Counters {
    type Output = Counters;

    fn add(self, o: Counters) -> Counters {
        Counters {
            accesses: self.accesses + o.accesses,
            hits: self.hits + o.hits,
            misses: self.misses + o.misses,
            compulsory_misses: self.compulsory_misses + o.compulsory_misses,
            non_compulsory_misses: self.non_compulsory_misses + o.non_compulsory_misses,
        }
    }
}

/// Sector accesses and hits observed during one wavefront step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveSample {
    pub accesses: u64,
    pub hits: u64,
    pub kv_accesses: u64,
    pub kv_hits: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub q: Counters,
    pub k: Counters,
    pub v: Counters,
    pub o: Counters,
    pub total: Counters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waves: Option<Vec<WaveSample>>,
}

impl CacheStats {
    pub fn tensor(&self, t: Tensor) -> &Counters {
        match t {
            Tensor::Q => &self.q,
            Tensor::K => &self.k,
            Tensor::V => &self.v,
            Tensor::O => &self.o,
        }
    }

    fn tensor_mut(&mut self, t: Tensor) -> &mut Counters {
        match t {
            Tensor::Q => &mut self.q,
            Tensor::K => &mut self.k,
            Tensor::V => &mut self.v,
            Tensor::O => &mut self.o,
        }
    }

    /// K and V combined: the streamed part of the traffic.
    pub fn kv(&self) -> Counters {
        self.k + self.v
    }

    pub fn hit_rate(&self) -> f64 {
        self.total.hit_rate()
    }

    pub fn kv_hit_rate(&self) -> f64 {
        self.kv().hit_rate()
    }

    fn record(&mut self, tensor: Tensor, wave: u64, sectors: u64, outcome: Outcome) {
        self.tensor_mut(tensor).record(sectors, outcome);
        self.total.record(sectors, outcome);
        if let Some(waves) = &mut self.waves {
            let w = wave as usize;
            if waves.len() <= w {
                waves.resize(w + 1, WaveSample::default());
            }
            let hit = if outcome == Outcome::Hit { sectors } else { 0 };
            let sample = &mut waves[w];
            sample.accesses += sectors;
            sample.hits += hit;
            if matches!(tensor, Tensor::K | Tensor::V) {
                sample.kv_accesses += sectors;
                sample.kv_hits += hit;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Hit,
    ColdMiss,
    Miss,
}

const NIL: u32 = u32::MAX;

enum KeyIndex {
    Dense(Vec<u32>),
    Sparse(HashMap<u64, u32>),
}

impl KeyIndex {
    fn new(key_space: Option<u64>) -> Self {
        match key_space {
            Some(n) if n <= 1 << 28 => KeyIndex::Dense(vec![NIL; n as usize]),
            _ => KeyIndex::Sparse(HashMap::new()),
        }
    }

    fn get(&self, key: u64) -> u32 {
        match self {
            KeyIndex::Dense(v) => v.get(key as usize).copied().unwrap_or(NIL),
            KeyIndex::Sparse(m) => m.get(&key).copied().unwrap_or(NIL),
        }
    }

    fn set(&mut self, key: u64, slot: u32) {
        match self {
            KeyIndex::Dense(v) => {
                let k = key as usize;
                if k >= v.len() {
                    v.resize(k + 1, NIL);
                }
                v[k] = slot;
            }
            KeyIndex::Sparse(m) => {
                if slot == NIL {
                    m.remove(&key);
                } else {
                    m.insert(key, slot);
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Node {
    key: u64,
    weight: u64,
    prev: u32,
    next: u32,
}

/// Fully-associative LRU over weighted entries; capacity is in sectors.
struct LruStack {
    nodes: Vec<Node>,
    free: Vec<u32>,
    index: KeyIndex,
    head: u32,
    tail: u32,
    used: u64,
    capacity: u64,
}

impl LruStack {
    fn new(capacity: u64, key_space: Option<u64>) -> Self {
        Self {
            nodes: Vec::new(),
            free: Vec::new(),
            index: KeyIndex::new(key_space),
            head: NIL,
            tail: NIL,
            used: 0,
            capacity,
        }
    }

    fn unlink(&mut self, slot: u32) {
        let Node { prev, next, .. } = self.nodes[slot as usize];
        if prev == NIL {
            self.head = next;
        } else {
            self.nodes[prev as usize].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.nodes[next as usize].prev = prev;
        }
    }

    fn push_front(&mut self, slot: u32) {
        self.nodes[slot as usize].prev = NIL;
        self.nodes[slot as usize].next = self.head;
        if self.head != NIL {
            self.nodes[self.head as usize].prev = slot;
        } else {
            self.tail = slot;
        }
        self.head = slot;
    }

    /// Touches `key`; returns whether it was resident.
    fn access(&mut self, key: u64, weight: u64) -> bool {
        let slot = self.index.get(key);
        if slot != NIL {
            if self.head != slot {
                self.unlink(slot);
                self.push_front(slot);
            }
            return true;
        }
        let node = Node { key, weight, prev: NIL, next: NIL };
        let slot = match self.free.pop() {
            Some(s) => {
                self.nodes[s as usize] = node;
                s
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        self.index.set(key, slot);
        self.push_front(slot);
        self.used += weight;
        while self.used > self.capacity {
            let victim = self.tail;
            self.unlink(victim);
            let Node { key, weight, .. } = self.nodes[victim as usize];
            self.index.set(key, NIL);
            self.used -= weight;
            self.free.push(victim);
        }
        false
    }
}

/// `ways`-way set-associative LRU, set chosen by `sector_id mod sets`.
struct SetAssoc {
    ways: usize,
    sets: u64,
    /// `sets × ways` keys, most recent first within each set.
    lines: Vec<u64>,
}

impl SetAssoc {
    const EMPTY: u64 = u64::MAX;

    fn new(sets: u64, ways: u32) -> Self {
        Self { ways: ways as usize, sets, lines: vec![Self::EMPTY; sets as usize * ways as usize] }
    }

    fn access(&mut self, key: u64) -> bool {
        let base = (key % self.sets) as usize * self.ways;
        let set = &mut self.lines[base..base + self.ways];
        match set.iter().position(|&k| k == key) {
            Some(pos) => {
                set[..=pos].rotate_right(1);
                true
            }
            None => {
                set.rotate_right(1);
                set[0] = key;
                false
            }
        }
    }
}

enum Store {
    Full(LruStack),
    Sets(SetAssoc),
}

enum FirstTouch {
    Dense(Vec<u64>),
    Sparse(HashSet<u64>),
}

impl FirstTouch {
    fn new(key_space: Option<u64>) -> Self {
        match key_space {
            Some(n) if n <= 1 << 34 => FirstTouch::Dense(vec![0; n.div_ceil(64) as usize]),
            _ => FirstTouch::Sparse(HashSet::new()),
        }
    }

    /// Marks `key` as seen; returns true on the first call for that key.
    fn insert(&mut self, key: u64) -> bool {
        match self {
            FirstTouch::Dense(bits) => {
                let (w, b) = ((key / 64) as usize, key % 64);
                if w >= bits.len() {
                    bits.resize(w + 1, 0);
                }
                let fresh = bits[w] & (1 << b) == 0;
                bits[w] |= 1 << b;
                fresh
            }
            FirstTouch::Sparse(set) => set.insert(key),
        }
    }
}

/// Incremental simulator. Feed it sectors or weighted blocks, then call
/// [`Simulator::finish`].
pub struct Simulator {
    store: Store,
    seen: FirstTouch,
    stats: CacheStats,
}

impl Simulator {
    /// `key_space`, when known, is an exclusive upper bound on keys and lets
    /// the simulator use flat tables instead of hash maps.
    pub fn new(cache: &CacheModel, key_space: Option<u64>, wave_series: bool) -> Self {
        let capacity = cache.capacity_sectors();
        let store = match cache.associativity {
            Associativity::Ways(k) if capacity > 0 => {
                Store::Sets(SetAssoc::new(capacity / u64::from(k), k))
            }
            _ => Store::Full(LruStack::new(capacity, key_space)),
        };
        Self {
            store,
            seen: FirstTouch::new(key_space),
            stats: CacheStats { waves: wave_series.then(Vec::new), ..Default::default() },
        }
    }

    /// One access of `weight` sectors under `key`. Set-associative stores
    /// only accept unit weights.
    pub fn access(&mut self, key: u64, weight: u64, tensor: Tensor, wave: u64) {
        let hit = match &mut self.store {
            Store::Full(lru) => lru.access(key, weight),
            Store::Sets(sets) => {
                debug_assert_eq!(weight, 1);
                sets.access(key)
            }
        };
        let first = self.seen.insert(key);
        let outcome = match (hit, first) {
            (true, _) => Outcome::Hit,
            (false, true) => Outcome::ColdMiss,
            (false, false) => Outcome::Miss,
        };
        self.stats.record(tensor, wave, weight, outcome);
    }

    pub fn finish(self) -> CacheStats {
        self.stats
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Record a per-wavefront hit-rate series.
    pub wave_series: bool,
    /// Refuse sector-exact runs above this many sector events.
    pub max_sector_events: Option<u64>,
    /// Exclusive bound on sector ids of a replayed stream, when known.
    pub key_space: Option<u64>,
}

pub fn simulate(trace: &AccessTrace, cache: &CacheModel, fidelity: SimFidelity) -> Result<CacheStats> {
    simulate_with(trace, cache, fidelity, SimOptions::default())
}

/// Runs a generated trace through the cache. `cache` supplies the geometry;
/// its sector size must match the one the trace was generated with.
pub fn simulate_with(
    trace: &AccessTrace,
    cache: &CacheModel,
    fidelity: SimFidelity,
    options: SimOptions,
) -> Result<CacheStats> {
    if cache.sector_bytes != trace.sector_bytes() {
        return Err(Error::MismatchedInputs(format!(
            "trace uses {}-byte sectors, cache {}-byte",
            trace.sector_bytes(),
            cache.sector_bytes
        )));
    }
    let map = trace.address_map();
    match fidelity {
        SimFidelity::SectorExact => {
            if let Some(cap) = options.max_sector_events {
                trace.check_cap(cap)?;
            }
            let mut sim = Simulator::new(cache, Some(map.total_sectors()), options.wave_series);
            for t in trace.tiles() {
                for s in t.first_sector..t.first_sector + u64::from(t.sectors) {
                    sim.access(s, 1, t.tensor, t.wave);
                }
            }
            Ok(sim.finish())
        }
        SimFidelity::TileBlock => {
            if cache.associativity != Associativity::Full {
                return Err(Error::BlockFidelityNeedsFullAssociativity);
            }
            let mut sim = Simulator::new(cache, Some(map.total_blocks()), options.wave_series);
            for t in trace.tiles() {
                sim.access(t.block, u64::from(t.sectors), t.tensor, t.wave);
            }
            Ok(sim.finish())
        }
    }
}

/// Replays an arbitrary sector stream, e.g. a decoded trace dump.
///
/// In tile-block mode, maximal runs of consecutive sectors sharing tensor,
/// kind, CTA and wave are treated as blocks; the run fails if two runs
/// overlap without being the same block.
pub fn simulate_sectors<I>(
    accesses: I,
    cache: &CacheModel,
    fidelity: SimFidelity,
    options: SimOptions,
) -> Result<CacheStats>
where
    I: IntoIterator<Item = SectorAccess>,
{
    match fidelity {
        SimFidelity::SectorExact => {
            let mut sim = Simulator::new(cache, options.key_space, options.wave_series);
            for (n, a) in accesses.into_iter().enumerate() {
                if options.max_sector_events.is_some_and(|cap| n as u64 >= cap) {
                    return Err(Error::TraceTooLarge { events: n as u64 + 1, cap: n as u64 });
                }
                sim.access(a.sector_id, 1, a.tensor, a.wave);
            }
            Ok(sim.finish())
        }
        SimFidelity::TileBlock => {
            if cache.associativity != Associativity::Full {
                return Err(Error::BlockFidelityNeedsFullAssociativity);
            }
            let mut sim = Simulator::new(cache, None, options.wave_series);
            let mut blocks = BlockRegistry::default();
            let mut run: Option<(SectorAccess, u64)> = None;
            for a in accesses {
                if let Some((head, len)) = &mut run {
                    let continues = a.tensor == head.tensor
                        && a.kind == head.kind
                        && a.cta == head.cta
                        && a.wave == head.wave
                        && a.sector_id == head.sector_id + *len;
                    if continues {
                        *len += 1;
                        continue;
                    }
                    blocks.check(head.sector_id, *len)?;
                    sim.access(head.sector_id, *len, head.tensor, head.wave);
                }
                run = Some((a, 1));
            }
            if let Some((head, len)) = run {
                blocks.check(head.sector_id, len)?;
                sim.access(head.sector_id, len, head.tensor, head.wave);
            }
            Ok(sim.finish())
        }
    }
}

/// Remembers every block seen so far and rejects overlapping runs.
#[derive(Default)]
struct BlockRegistry {
    by_start: BTreeMap<u64, u64>,
}

impl BlockRegistry {
    fn check(&mut self, start: u64, len: u64) -> Result<()> {
        if let Some((&s, &l)) = self.by_start.range(..=start).next_back() {
            if s == start {
                if l != len {
                    return Err(Error::NotBlockAtomic {
                        sector: start,
                        reason: format!("run of {len} sectors, earlier run of {l}"),
                    });
                }
                return Ok(());
            }
            if s + l > start {
                return Err(Error::NotBlockAtomic {
                    sector: start,
                    reason: format!("starts inside the block at {s}"),
                });
            }
        }
        if let Some((&s, _)) = self.by_start.range(start + 1..).next() {
            if s < start + len {
                return Err(Error::NotBlockAtomic {
                    sector: start,
                    reason: format!("overlaps the block at {s}"),
                });
            }
        }
        self.by_start.insert(start, len);
        Ok(())
    }
}

/// Effect of switching from a baseline run to a candidate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub baseline_non_compulsory: u64,
    pub candidate_non_compulsory: u64,
    pub non_compulsory_delta: i64,
    /// Fraction of the baseline's non-compulsory misses removed; `None`
    /// when the baseline has none.
    pub non_compulsory_reduction: Option<f64>,
    pub baseline_misses: u64,
    pub candidate_misses: u64,
    pub miss_delta: i64,
    pub miss_reduction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub const NO_NON_COMPULSORY: &str = "no non-compulsory misses to reduce";

/// Compares two runs of the same workload. Their per-tensor access and
/// compulsory counts must agree.
pub fn classify(baseline: &CacheStats, candidate: &CacheStats) -> Result<ReductionReport> {
    for t in Tensor::ALL {
        let (a, b) = (baseline.tensor(t), candidate.tensor(t));
        if a.accesses != b.accesses || a.compulsory_misses != b.compulsory_misses {
            return Err(Error::MismatchedInputs(format!(
                "{} traffic differs ({} vs {} accesses, {} vs {} compulsory)",
                t.name(),
                a.accesses,
                b.accesses,
                a.compulsory_misses,
                b.compulsory_misses
            )));
        }
    }
    let reduction = |base: u64, cand: u64| {
        (base > 0).then(|| (base as f64 - cand as f64) / base as f64)
    };
    let (bn, cn) = (baseline.total.non_compulsory_misses, candidate.total.non_compulsory_misses);
    let (bm, cm) = (baseline.total.misses, candidate.total.misses);
    Ok(ReductionReport {
        baseline_non_compulsory: bn,
        candidate_non_compulsory: cn,
        non_compulsory_delta: cn as i64 - bn as i64,
        non_compulsory_reduction: reduction(bn, cn),
        baseline_misses: bm,
        candidate_misses: cm,
        miss_delta: cm as i64 - bm as i64,
        miss_reduction: reduction(bm, cm),
        note: (bn == 0 && cn == 0).then(|| NO_NON_COMPULSORY.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionConfig, ScanOrder, ScheduleKind, SchedulePolicy};
    use crate::tracegen::AccessKind;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn cache(capacity_sectors: u64) -> CacheModel {
        CacheModel { capacity_bytes: capacity_sectors * 32, ..Default::default() }
    }

    fn read(sector_id: u64) -> SectorAccess {
        SectorAccess { tensor: Tensor::K, kind: AccessKind::Read, cta: 0, wave: 0, sector_id }
    }

    fn naive_lru_misses(keys: &[u64], capacity: usize) -> u64 {
        let mut stack: VecDeque<u64> = VecDeque::new();
        let mut misses = 0;
        for &k in keys {
            if let Some(p) = stack.iter().position(|&x| x == k) {
                stack.remove(p);
            } else {
                misses += 1;
            }
            stack.push_front(k);
            stack.truncate(capacity);
        }
        misses
    }

    #[test]
    fn zero_capacity_never_hits() {
        let keys = [1, 2, 1, 1, 3, 2];
        let s = simulate_sectors(keys.map(read), &cache(0), SimFidelity::SectorExact, SimOptions::default())
            .unwrap();
        assert_eq!(s.total.hits, 0);
        assert_eq!(s.total.misses, 6);
        assert_eq!(s.total.compulsory_misses, 3);
    }

    #[test]
    fn classic_lru_sequence() {
        // capacity 2: 1 2 1 3 2 -> M M H M M
        let s = simulate_sectors([1, 2, 1, 3, 2].map(read), &cache(2), SimFidelity::SectorExact, SimOptions::default())
            .unwrap();
        assert_eq!((s.total.hits, s.total.compulsory_misses, s.total.non_compulsory_misses), (1, 3, 1));
    }

    #[test]
    fn set_associative_conflicts() {
        // 2 sets x 1 way: 0 and 2 collide in set 0.
        let m = CacheModel { capacity_bytes: 64, associativity: Associativity::Ways(1), ..Default::default() };
        let s = simulate_sectors([0, 2, 0, 1, 0].map(read), &m, SimFidelity::SectorExact, SimOptions::default())
            .unwrap();
        assert_eq!(s.total.hits, 1);
        assert_eq!(s.total.non_compulsory_misses, 1);
    }

    #[test]
    fn tile_block_rejects_set_associative() {
        let m = CacheModel { associativity: Associativity::Ways(16), ..Default::default() };
        let r = simulate_sectors([read(0)], &m, SimFidelity::TileBlock, SimOptions::default());
        assert!(matches!(r, Err(Error::BlockFidelityNeedsFullAssociativity)));
    }

    #[test]
    fn tile_block_rejects_overlapping_runs() {
        let mut a = vec![read(0), read(1), read(2), read(3)];
        let mut shifted = read(2);
        shifted.wave = 1;
        a.push(shifted);
        let r = simulate_sectors(a, &cache(8), SimFidelity::TileBlock, SimOptions::default());
        assert!(matches!(r, Err(Error::NotBlockAtomic { .. })));
    }

    #[test]
    fn wave_series_tracks_kv_separately() {
        let c = AttentionConfig { seq_len: 16, tile: 4, head_dim: 8, ..Default::default() };
        let m = CacheModel { n_sm: 2, ..cache(1 << 10) };
        let t = AccessTrace::new(&c, &m, &SchedulePolicy::default(), ScanOrder::Cyclic).unwrap();
        let opts = SimOptions { wave_series: true, ..Default::default() };
        let s = simulate_with(&t, &m, SimFidelity::SectorExact, opts).unwrap();
        let waves = s.waves.as_ref().unwrap();
        assert_eq!(waves.iter().map(|w| w.accesses).sum::<u64>(), s.total.accesses);
        assert_eq!(waves.iter().map(|w| w.kv_hits).sum::<u64>(), s.kv().hits);
    }

    #[test]
    fn classify_reports() {
        let a = simulate_sectors([1, 2, 3, 1, 2, 3].map(read), &cache(2), SimFidelity::SectorExact, SimOptions::default())
            .unwrap();
        let same = classify(&a, &a).unwrap();
        assert_eq!(same.non_compulsory_reduction, Some(0.0));
        let b = simulate_sectors([1, 2, 3, 3, 2, 1].map(read), &cache(2), SimFidelity::SectorExact, SimOptions::default())
            .unwrap();
        let r = classify(&a, &b).unwrap();
        assert_eq!((r.baseline_non_compulsory, r.candidate_non_compulsory), (3, 1));
        assert!((r.non_compulsory_reduction.unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let fits = simulate_sectors([1, 2, 1].map(read), &cache(4), SimFidelity::SectorExact, SimOptions::default())
            .unwrap();
        let none = classify(&fits, &fits).unwrap();
        assert_eq!(none.non_compulsory_reduction, None);
        assert_eq!(none.note.as_deref(), Some(NO_NON_COMPULSORY));

        assert!(matches!(classify(&a, &fits), Err(Error::MismatchedInputs(_))));
    }

    #[test]
    fn sector_size_must_match_trace() {
        let c = AttentionConfig { seq_len: 8, tile: 4, head_dim: 8, ..Default::default() };
        let t = AccessTrace::new(&c, &CacheModel::default(), &SchedulePolicy::default(), ScanOrder::Cyclic)
            .unwrap();
        let other = CacheModel { sector_bytes: 64, ..Default::default() };
        assert!(simulate(&t, &other, SimFidelity::SectorExact).is_err());
    }

    #[test]
    fn fidelities_agree_on_generated_traces() {
        for causal in [false, true] {
            for kind in [ScheduleKind::PersistentRoundRobin, ScheduleKind::NonPersistent, ScheduleKind::TileStep2] {
                for scan in [ScanOrder::Cyclic, ScanOrder::Sawtooth] {
                    let c = AttentionConfig { seq_len: 90, tile: 8, head_dim: 8, batch: 2, causal, ..Default::default() };
                    for cap in [0, 7, 40, 100, 333, 2000] {
                        let m = CacheModel { n_sm: 3, ..cache(cap) };
                        let t = AccessTrace::new(&c, &m, &SchedulePolicy::new(kind), scan).unwrap();
                        let exact = simulate(&t, &m, SimFidelity::SectorExact).unwrap();
                        let block = simulate(&t, &m, SimFidelity::TileBlock).unwrap();
                        assert_eq!(exact, block, "{kind:?} {scan:?} causal={causal} cap={cap}");
                        let replay = simulate_sectors(t.sectors(), &m, SimFidelity::TileBlock, SimOptions::default())
                            .unwrap();
                        assert_eq!(exact, replay);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn matches_naive_lru(keys in prop::collection::vec(0u64..40, 0..400), capacity in 0usize..48) {
            let s = simulate_sectors(keys.iter().map(|&k| read(k)), &cache(capacity as u64), SimFidelity::SectorExact, SimOptions::default())
                .unwrap();
            prop_assert_eq!(s.total.misses, naive_lru_misses(&keys, capacity));
            prop_assert_eq!(s.total.hits + s.total.misses, s.total.accesses);
            prop_assert_eq!(s.total.compulsory_misses + s.total.non_compulsory_misses, s.total.misses);
            let mut distinct = keys.clone();
            distinct.sort_unstable();
            distinct.dedup();
            prop_assert_eq!(s.total.compulsory_misses, distinct.len() as u64);
        }

        #[test]
        fn lru_inclusion(keys in prop::collection::vec(0u64..64, 0..300), c1 in 0u64..70, extra in 0u64..30) {
            let run = |c| simulate_sectors(keys.iter().map(|&k| read(k)), &cache(c), SimFidelity::SectorExact, SimOptions::default())
                .unwrap().total.misses;
            prop_assert!(run(c1) >= run(c1 + extra));
        }

        #[test]
        fn per_tensor_sums_to_total(keys in prop::collection::vec((0u8..4, 0u64..30), 0..200), capacity in 0u64..32) {
            let acc = keys.iter().map(|&(t, k)| SectorAccess { tensor: Tensor::from_index(t).unwrap(), ..read(k) });
            let s = simulate_sectors(acc, &cache(capacity), SimFidelity::SectorExact, SimOptions::default()).unwrap();
            prop_assert_eq!(s.q + s.k + s.v + s.o, s.total);
        }
    }
}
