//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rayon::prelude::*;

use wavecache::experiment::{run_oracle, OracleConfig};
use wavecache::prelude::*;

const S_32K: u64 = 32_768;
const S_128K: u64 = 131_072;
const SWEEP: [u64; 16] = [
    8_192, 16_384, 24_576, 32_768, 40_960, 49_152, 57_344, 65_536, 73_728, 81_920, 90_112,
    98_304, 106_496, 114_688, 122_880, 131_072,
];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn gb10() -> CacheModel {
    CacheModel::default()
}

fn cfg(seq_len: u64) -> AttentionConfig {
    AttentionConfig { seq_len, ..Default::default() }
}

fn tile_block(config: &AttentionConfig, cache: &CacheModel, sched: SchedulePolicy, scan: ScanOrder) -> CacheStats {
    let trace = AccessTrace::new(config, cache, &sched, scan).expect("valid trace");
    simulate(&trace, cache, SimFidelity::TileBlock).expect("simulation")
}

fn persistent() -> SchedulePolicy {
    SchedulePolicy::new(ScheduleKind::PersistentRoundRobin)
}

/// 1. Golden Table 2 totals, exact, plus runtime limits.
fn golden_counts() -> Outcome {
    let np = SchedulePolicy::new(ScheduleKind::NonPersistent);
    let mut notes = Vec::new();
    let mut ok = true;

    let start = Instant::now();
    let closed: Vec<u64> = [S_32K, S_128K]
        .iter()
        .map(|&s| AccessTrace::new(&cfg(s), &gb10(), &np, ScanOrder::Cyclic).unwrap().expected_totals().total())
        .collect();
    let closed_time = start.elapsed();
    ok &= closed == [107_741_184, 1_719_664_640] && closed_time < Duration::from_secs(1);
    notes.push(format!("closed-form {closed:?} in {closed_time:.2?}"));

    for (&s, &want) in [S_32K, S_128K].iter().zip(&[107_741_184u64, 1_719_664_640]) {
        let trace = AccessTrace::new(&cfg(s), &gb10(), &np, ScanOrder::Cyclic).unwrap();
        let walked = trace_totals(trace.tiles()).total();
        ok &= walked == want;
        notes.push(format!("walked S={s}: {walked}"));
    }

    let start = Instant::now();
    let trace = AccessTrace::new(&cfg(S_32K), &gb10(), &np, ScanOrder::Cyclic).unwrap();
    let stats = simulate(&trace, &gb10(), SimFidelity::SectorExact).unwrap();
    let sim_time = start.elapsed();
    ok &= stats.total.accesses == 107_741_184 && sim_time < Duration::from_secs(120);
    notes.push(format!("sector-exact 32K sim: {} accesses in {sim_time:.2?}", stats.total.accesses));
    outcome(ok, notes.join("; "))
}

/// 2. Compulsory misses equal 4·SDE/C.
fn cold_miss_law() -> Outcome {
    let trace = AccessTrace::new(&cfg(S_32K), &gb10(), &SchedulePolicy::new(ScheduleKind::NonPersistent), ScanOrder::Cyclic)
        .unwrap();
    let exact = simulate(&trace, &gb10(), SimFidelity::SectorExact).unwrap();
    let mut ok = exact.total.compulsory_misses == 524_288;
    let mut bad = Vec::new();
    let results: Vec<(u64, u64, u64)> = SWEEP
        .par_iter()
        .map(|&s| {
            let stats = tile_block(&cfg(s), &gb10(), persistent(), ScanOrder::Cyclic);
            (s, stats.total.compulsory_misses, cold_sectors(s, 64, 2, 32))
        })
        .collect();
    for (s, got, want) in &results {
        assert_eq!((s * 64 * 2) % 32, 0);
        if got != want {
            ok = false;
            bad.push(format!("S={s}: {got} != {want}"));
        }
    }
    outcome(
        ok,
        format!(
            "32K sector-exact compulsory {} (want 524288); sweep of {} points, mismatches {:?}",
            exact.total.compulsory_misses,
            results.len(),
            bad
        ),
    )
}

/// 3. MAPE of the closed-form models against exact trace counts.
fn model_accuracy() -> Outcome {
    let series = |causal: bool| -> (f64, bool) {
        let mut consistent = true;
        let pairs: Vec<(f64, f64)> = SWEEP
            .par_iter()
            .map(|&s| {
                let config = AttentionConfig { causal, ..cfg(s) };
                let trace = AccessTrace::new(&config, &gb10(), &persistent(), ScanOrder::Cyclic).unwrap();
                let walked = trace_totals(trace.tiles());
                let model = if causal {
                    sectors_causal_approx(s, 64, 2, 32, 80)
                } else {
                    sectors_noncausal_approx(s, 64, 2, 32, 80)
                };
                (walked.total() as f64, model.sectors(), walked == trace.expected_totals())
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|(exact, model, same)| {
                consistent &= same;
                (exact, model)
            })
            .collect();
        (mape(&pairs).unwrap(), consistent)
    };
    let (non_causal, c1) = series(false);
    let (causal, c2) = series(true);
    outcome(
        non_causal <= 1.0 && causal <= 3.0 && c1 && c2,
        format!("non-causal MAPE {non_causal:.4}% (≤ 1%), causal MAPE {causal:.4}% (≤ 3%)"),
    )
}

/// 4. Onset of non-compulsory misses relative to the capacity bound.
fn divergence_onset() -> Outcome {
    let non_compulsory = |s: u64| {
        let start = Instant::now();
        let stats = tile_block(&cfg(s), &gb10(), persistent(), ScanOrder::Cyclic);
        (stats.total.non_compulsory_misses, start.elapsed())
    };
    let below: Vec<(u64, u64, Duration)> = SWEEP[..8]
        .par_iter()
        .map(|&s| {
            let (n, t) = non_compulsory(s);
            (s, n, t)
        })
        .collect();
    let (at_bound, bound_time) = non_compulsory(98_304);
    let mut slowest = below.iter().map(|b| b.2).max().unwrap().max(bound_time);

    // Smallest S with non-compulsory misses, by bisection on (65536, 98304].
    let (mut lo, mut hi) = (65_536u64, 98_304u64);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let (n, t) = non_compulsory(mid);
        slowest = slowest.max(t);
        if n > 0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let estimate = divergence_length(&gb10(), 64, 2, Some(80));
    let ratio = hi as f64 / estimate.capacity_bound;
    let ok = below.iter().all(|b| b.1 == 0)
        && at_bound > 0
        && (0.75..=1.0).contains(&ratio)
        && slowest < Duration::from_secs(30);
    outcome(
        ok,
        format!(
            "zero for S ≤ 65536: {}; at 98304: {at_bound}; onset S={hi} = {ratio:.4} × bound (observed ratio 20/24 ≈ 0.833, overhead-adjusted estimate {:.0}); slowest point {slowest:.2?}",
            below.iter().all(|b| b.1 == 0),
            estimate.overhead_adjusted.unwrap()
        ),
    )
}

/// 5. KV hit rate follows 1 − 1/N_SM.
fn wavefront_hit_rate() -> Outcome {
    let rate = |n_sm: u32| {
        let cache = CacheModel { n_sm, ..gb10() };
        tile_block(&cfg(S_128K), &cache, persistent(), ScanOrder::Cyclic).kv_hit_rate()
    };
    let at48 = rate(48);
    let mut ok = (at48 - 47.0 / 48.0).abs() <= 0.005;
    let sweep: Vec<(u32, f64)> = [2u32, 4, 8, 16, 32, 48].par_iter().map(|&n| (n, rate(n))).collect();
    let mut rows = Vec::new();
    for (n, r) in &sweep {
        let err = (r - hit_rate_model(*n)).abs();
        ok &= err <= 0.01;
        rows.push(format!("{n}:{:.3}%", 100.0 * r));
    }
    outcome(ok, format!("48 SMs KV hit rate {:.3}% (target {:.3}% ± 0.5pp); sweep {}", 100.0 * at48, 100.0 * 47.0 / 48.0, rows.join(" ")))
}

/// 6. Sawtooth removes at least 45% of non-compulsory misses at 2× KV.
fn sawtooth_reduction() -> Outcome {
    // 2·S·D·E = 2 × 24 MiB
    let s = 2 * 98_304;
    assert_eq!(kv_bytes(&cfg(s)), 2 * gb10().capacity_bytes);
    let results: Vec<(u64, ReductionReport)> = [1u64, 2, 4, 8]
        .par_iter()
        .map(|&b| {
            let config = AttentionConfig { batch: b, ..cfg(s) };
            let (cyc, saw) = rayon::join(
                || tile_block(&config, &gb10(), persistent(), ScanOrder::Cyclic),
                || tile_block(&config, &gb10(), persistent(), ScanOrder::Sawtooth),
            );
            (b, classify(&cyc, &saw).unwrap())
        })
        .collect();
    let mut ok = true;
    let mut rows = Vec::new();
    for (b, r) in &results {
        let ratio = r.candidate_non_compulsory as f64 / r.baseline_non_compulsory as f64;
        ok &= r.baseline_non_compulsory > 0 && ratio <= 0.55;
        rows.push(format!("B={b}: {:.2}%", 100.0 * (1.0 - ratio)));
    }
    outcome(ok, format!("non-compulsory reduction {}", rows.join(", ")))
}

/// 7. LRU simulation equals stack-distance prediction at every capacity.
fn oracle_equivalence() -> Outcome {
    let report = run_oracle(OracleConfig { seed: 2024, traces: 100, max_events: 10_000, max_distinct: 256 });
    outcome(
        report.passed,
        format!(
            "{} cases, {} capacity checks, {} mismatches, {} naive/fast disagreements",
            report.cases,
            report.capacity_checks,
            report.mismatches.len(),
            report.naive_mismatches.len()
        ),
    )
}

fn access_multiset(trace: &AccessTrace) -> HashMap<(Tensor, u64), u64> {
    let mut m = HashMap::new();
    for s in trace.sectors() {
        *m.entry((s.tensor, s.sector_id)).or_default() += 1;
    }
    m
}

/// 8. Schedules and scan orders only permute the access multiset.
fn permutation_invariance() -> Outcome {
    let strategy = (
        1u64..6,          // tile
        1u64..40,         // seq_len multiplier
        1u64..4,          // batch
        1u64..3,          // heads
        1u32..6,          // n_sm
        prop::sample::select(vec![4u64, 8, 16]),
        1u64..200,        // capacity in sectors
    );
    let mut runner = TestRunner::new(PropConfig { cases: 64, failure_persistence: None, ..PropConfig::default() });
    let kinds = [
        ScheduleKind::PersistentRoundRobin,
        ScheduleKind::NonPersistent,
        ScheduleKind::PersistentContiguous,
        ScheduleKind::TileStep2,
    ];
    let result = runner.run(&strategy, |(tile, mult, batch, heads, n_sm, head_dim, cap)| {
        let config = AttentionConfig { seq_len: tile * mult + mult % tile, tile, head_dim, batch, heads, ..Default::default() };
        let cache = CacheModel { n_sm, capacity_bytes: cap * 32, ..Default::default() };
        let mut reference = None;
        for kind in kinds {
            for scan in [ScanOrder::Cyclic, ScanOrder::Sawtooth] {
                let trace = AccessTrace::new(&config, &cache, &SchedulePolicy::new(kind), scan).unwrap();
                let multiset = access_multiset(&trace);
                let stats = simulate(&trace, &cache, SimFidelity::SectorExact).unwrap();
                let key = (multiset, stats.total.compulsory_misses, stats.total.accesses);
                match &reference {
                    None => reference = Some(key),
                    Some(r) => {
                        prop_assert_eq!(&r.0, &key.0, "{:?} {:?}", kind, scan);
                        prop_assert_eq!(r.1, key.1);
                        prop_assert_eq!(r.2, key.2);
                    }
                }
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => outcome(true, "64 random configs × 4 schedules × 2 scans share one access multiset and compulsory count"),
        Err(e) => outcome(false, format!("{e}")),
    }
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("1 golden sector counts", golden_counts),
        ("2 cold-miss law", cold_miss_law),
        ("3 model MAPE", model_accuracy),
        ("4 divergence onset", divergence_onset),
        ("5 wavefront hit-rate factor", wavefront_hit_rate),
        ("6 sawtooth reduction", sawtooth_reduction),
        ("7 oracle equivalence", oracle_equivalence),
        ("8 permutation invariance", permutation_invariance),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let tag = if result.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {name} ({:.1?}): {}", start.elapsed(), result.detail);
        failed += usize::from(!result.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
