//! LRU stack distances.
//!
//! The stack distance of an access is the number of distinct keys touched
//! since the previous access to the same key; first touches have infinite
//! distance. An access hits a fully-associative LRU cache of `c` entries iff
//! its distance is below `c`, which makes the histogram a miss-count oracle
//! for every capacity at once.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    /// Exact distance → occurrences, for distances below `cap`.
    pub counts: BTreeMap<u64, u64>,
    /// Occurrences with distance ≥ `cap`.
    pub overflow: u64,
    pub cap: Option<u64>,
    /// First touches.
    pub infinite: u64,
}

impl DistanceHistogram {
    fn with_cap(cap: Option<u64>) -> Self {
        Self { cap, ..Default::default() }
    }

    fn record(&mut self, distance: Option<u64>) {
        match distance {
            None => self.infinite += 1,
            Some(d) if self.cap.is_some_and(|cap| d >= cap) => self.overflow += 1,
            Some(d) => *self.counts.entry(d).or_default() += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.infinite + self.overflow + self.counts.values().sum::<u64>()
    }

    pub fn get(&self, distance: u64) -> u64 {
        self.counts.get(&distance).copied().unwrap_or(0)
    }

    /// Misses of a fully-associative LRU cache holding `capacity` entries.
    pub fn misses_at_capacity(&self, capacity: u64) -> Result<u64> {
        if let Some(cap) = self.cap {
            if capacity > cap {
                return Err(Error::CapacityBeyondHistogram { capacity, cap });
            }
        }
        let finite: u64 = self.counts.range(capacity..).map(|(_, n)| n).sum();
        Ok(self.infinite + self.overflow + finite)
    }

    /// `distance,count` rows; the infinite bucket is written as `inf` and
    /// the overflow bucket as `>=cap`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["distance", "count"])?;
        for (d, n) in &self.counts {
            w.write_record([d.to_string(), n.to_string()])?;
        }
        if let Some(cap) = self.cap {
            w.write_record([format!(">={cap}"), self.overflow.to_string()])?;
        }
        w.write_record(["inf".to_string(), self.infinite.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

/// Fenwick tree over access positions; a set bit marks the latest access
/// of some key.
struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, pos: usize, delta: i64) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..pos`.
    fn prefix(&self, pos: usize) -> i64 {
        let mut i = pos;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Exact stack-distance histogram in O(n log n).
pub fn stack_distances<I: IntoIterator<Item = u64>>(keys: I) -> DistanceHistogram {
    stack_distances_capped(keys, None)
}

pub fn stack_distances_capped<I: IntoIterator<Item = u64>>(
    keys: I,
    cap: Option<u64>,
) -> DistanceHistogram {
    let keys: Vec<u64> = keys.into_iter().collect();
    let mut hist = DistanceHistogram::with_cap(cap);
    let mut marks = Fenwick::new(keys.len());
    let mut last: HashMap<u64, usize> = HashMap::new();
    for (t, &key) in keys.iter().enumerate() {
        let distance = last.insert(key, t).map(|p| {
            let between = marks.prefix(t) - marks.prefix(p + 1);
            marks.add(p, -1);
            between as u64
        });
        marks.add(t, 1);
        hist.record(distance);
    }
    hist
}

/// Quadratic reference: scans back to the previous access of each key.
pub fn stack_distances_naive(keys: &[u64]) -> DistanceHistogram {
    let mut hist = DistanceHistogram::with_cap(None);
    for (t, key) in keys.iter().enumerate() {
        let mut between = HashSet::new();
        let mut distance = None;
        for earlier in keys[..t].iter().rev() {
            if earlier == key {
                distance = Some(between.len() as u64);
                break;
            }
            between.insert(*earlier);
        }
        hist.record(distance);
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cyclic(n: u64) -> Vec<u64> {
        (0..n).chain(0..n).collect()
    }

    fn sawtooth(n: u64) -> Vec<u64> {
        (0..n).chain((0..n).rev()).collect()
    }

    #[test]
    fn cyclic_reuse_equals_footprint_minus_one() {
        let h = stack_distances(cyclic(8));
        assert_eq!(h.infinite, 8);
        assert_eq!(h.get(7), 8);
        assert_eq!(h.counts.len(), 1);
    }

    #[test]
    fn sawtooth_spreads_distances() {
        let h = stack_distances(sawtooth(8));
        assert_eq!(h.infinite, 8);
        for d in 0..8 {
            assert_eq!(h.get(d), 1, "distance {d}");
        }
    }

    #[test]
    fn no_repeats_are_all_infinite() {
        let h = stack_distances(0..100);
        assert_eq!(h.infinite, 100);
        assert!(h.counts.is_empty());
    }

    #[test]
    fn miss_tables() {
        let c = stack_distances(cyclic(8));
        let s = stack_distances(sawtooth(8));
        assert_eq!(c.misses_at_capacity(0).unwrap(), 16);
        assert_eq!(c.misses_at_capacity(8).unwrap(), 8);
        assert_eq!(s.misses_at_capacity(4).unwrap(), 12);
        assert_eq!(c.misses_at_capacity(4).unwrap(), 16);
    }

    #[test]
    fn sawtooth_dominates_cyclic() {
        let n = 8;
        let c = stack_distances(cyclic(n));
        let s = stack_distances(sawtooth(n));
        for cap in 0..=n + 2 {
            let (mc, ms) = (c.misses_at_capacity(cap).unwrap(), s.misses_at_capacity(cap).unwrap());
            assert!(ms <= mc);
            assert_eq!(ms == mc, cap == 0 || cap >= n, "capacity {cap}");
        }
    }

    #[test]
    fn capped_histogram() {
        let h = stack_distances_capped(cyclic(8), Some(4));
        assert_eq!(h.overflow, 8);
        assert_eq!(h.misses_at_capacity(4).unwrap(), 16);
        assert!(matches!(h.misses_at_capacity(5), Err(Error::CapacityBeyondHistogram { .. })));
    }

    #[test]
    fn csv_export() {
        let mut out = Vec::new();
        stack_distances([1, 2, 1, 1]).write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "distance,count\n0,1\n1,1\ninf,2\n");
    }

    proptest! {
        #[test]
        fn fast_matches_naive(keys in prop::collection::vec(0u64..50, 0..300)) {
            let fast = stack_distances(keys.iter().copied());
            prop_assert_eq!(&fast, &stack_distances_naive(&keys));
            prop_assert_eq!(fast.total(), keys.len() as u64);
            let mut distinct = keys.clone();
            distinct.sort_unstable();
            distinct.dedup();
            prop_assert_eq!(fast.infinite, distinct.len() as u64);
        }
    }
}
