//! Batch experiments: model sweeps, simulation sweeps, scan-order A/B
//! comparisons and the reuse-distance oracle check.
//!
//! Reports embed the fully resolved spec and its SHA-256 so every counter
//! can be traced back to the inputs that produced it. Sweep points run in
//! parallel but are always reported in sweep order.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{mape, sectors_causal_approx, sectors_noncausal_approx, ModelPrediction};
use crate::cachesim::{classify, simulate_sectors, simulate_with, CacheStats, ReductionReport, SimFidelity, SimOptions};
use crate::error::{Error, Result, ValidationErrors};
use crate::model::{validate, AttentionConfig, CacheModel, ScanOrder, SchedulePolicy};
use crate::rdist::{stack_distances, stack_distances_naive};
use crate::tracegen::{AccessKind, AccessTrace, SectorAccess, Tensor};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Optional sweep axes; the experiment runs over their cross product.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub seq_len: Option<Vec<u64>>,
    pub n_sm: Option<Vec<u32>>,
    pub batch: Option<Vec<u64>>,
    pub scan: Option<Vec<ScanOrder>>,
}

impl SweepAxes {
    fn is_empty(&self) -> bool {
        self.seq_len.is_none() && self.n_sm.is_none() && self.batch.is_none() && self.scan.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub config: AttentionConfig,
    pub cache: CacheModel,
    pub schedule: SchedulePolicy,
    pub scan: ScanOrder,
    pub fidelity: SimFidelity,
    #[serde(skip_serializing_if = "SweepAxes::is_empty")]
    pub sweep: SweepAxes,
    pub max_points: usize,
    /// Largest sector-exact trace a point may simulate.
    pub max_trace_events: u64,
    pub wave_series: bool,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            config: AttentionConfig::default(),
            cache: CacheModel::default(),
            schedule: SchedulePolicy::default(),
            scan: ScanOrder::Cyclic,
            fidelity: SimFidelity::SectorExact,
            sweep: SweepAxes::default(),
            max_points: 4096,
            max_trace_events: 2_000_000_000,
            wave_series: false,
            seed: 0,
        }
    }
}

/// One resolved sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub index: usize,
    pub config: AttentionConfig,
    pub cache: CacheModel,
    pub schedule: SchedulePolicy,
    pub scan: ScanOrder,
}

fn axis<T: Clone>(name: &'static str, values: &Option<Vec<T>>, base: T) -> Result<Vec<T>> {
    match values {
        Some(v) if v.is_empty() => Err(Error::EmptySweepAxis(name)),
        Some(v) => Ok(v.clone()),
        None => Ok(vec![base]),
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Expands the sweep, validating every point. Errors from all points
    /// are reported together.
    pub fn points(&self) -> Result<Vec<Point>> {
        let seq = axis("seq_len", &self.sweep.seq_len, self.config.seq_len)?;
        let sms = axis("n_sm", &self.sweep.n_sm, self.cache.n_sm)?;
        let batches = axis("batch", &self.sweep.batch, self.config.batch)?;
        let scans = axis("scan", &self.sweep.scan, self.scan)?;
        let count = seq.len() * sms.len() * batches.len() * scans.len();
        if count > self.max_points {
            return Err(Error::SweepTooLarge { points: count, cap: self.max_points });
        }
        let mut points = Vec::with_capacity(count);
        let mut errors = Vec::new();
        for &s in &seq {
            for &n_sm in &sms {
                for &b in &batches {
                    for &scan in &scans {
                        let config = AttentionConfig { seq_len: s, batch: b, ..self.config };
                        let cache = CacheModel { n_sm, ..self.cache };
                        if let Err(e) = validate(&config, &cache, &self.schedule) {
                            errors.extend(e.0.into_iter().map(|m| format!("point {}: {m}", points.len())));
                        }
                        points.push(Point { index: points.len(), config, cache, schedule: self.schedule, scan });
                    }
                }
            }
        }
        if !errors.is_empty() {
            errors.dedup();
            return Err(ValidationErrors(errors).into());
        }
        Ok(points)
    }
}

/// Model prediction for a whole launch (all slices).
pub fn model_for(config: &AttentionConfig, sector_bytes: u64) -> ModelPrediction {
    let f = if config.causal { sectors_causal_approx } else { sectors_noncausal_approx };
    f(config.seq_len, config.head_dim, config.elem_bytes, sector_bytes, config.tile)
        .scaled(config.slices() as f64)
}

/// Exact sector count of a launch, from the closed-form trace totals.
pub fn exact_sectors(config: &AttentionConfig, cache: &CacheModel) -> Result<u64> {
    let trace = AccessTrace::new(config, cache, &SchedulePolicy::default(), ScanOrder::Cyclic)?;
    Ok(trace.expected_totals().total())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub index: usize,
    pub seq_len: u64,
    pub tile: u64,
    pub batch: u64,
    pub causal: bool,
    pub model_m: f64,
    pub exact_m: Option<u64>,
    /// MAPE (%) over this row and all earlier rows that carry an exact count.
    pub mape_running: Option<f64>,
}

/// Evaluates the analytic model at every sweep point, optionally alongside
/// the exact trace count.
pub fn run_model(spec: &ExperimentSpec, with_exact: bool) -> Result<Vec<ModelRow>> {
    let mut pairs = Vec::new();
    spec.points()?
        .into_iter()
        .map(|p| {
            let model_m = model_for(&p.config, p.cache.sector_bytes).sectors();
            let exact_m = if with_exact { Some(exact_sectors(&p.config, &p.cache)?) } else { None };
            if let Some(exact) = exact_m {
                pairs.push((exact as f64, model_m));
            }
            Ok(ModelRow {
                index: p.index,
                seq_len: p.config.seq_len,
                tile: p.config.tile,
                batch: p.config.batch,
                causal: p.config.causal,
                model_m,
                exact_m,
                mape_running: exact_m.map(|_| mape(&pairs)).transpose()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub point: Point,
    pub fidelity: SimFidelity,
    pub stats: CacheStats,
    pub model: ModelPrediction,
    pub exact_sectors: u64,
    pub hit_rate: f64,
    pub kv_hit_rate: f64,
    pub non_compulsory_misses: u64,
    /// `|exact − model| / exact` in percent: this point's MAPE term.
    pub model_ape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub spec_hash: String,
    pub wall_time_ms: u128,
    pub spec: ExperimentSpec,
    pub points: Vec<PointReport>,
}

pub fn simulate_point(spec: &ExperimentSpec, point: &Point) -> Result<PointReport> {
    let trace = AccessTrace::new(&point.config, &point.cache, &point.schedule, point.scan)?;
    let options = SimOptions {
        wave_series: spec.wave_series,
        max_sector_events: Some(spec.max_trace_events),
        key_space: None,
    };
    let stats = simulate_with(&trace, &point.cache, spec.fidelity, options)?;
    let model = model_for(&point.config, point.cache.sector_bytes);
    let exact = trace.expected_totals().total();
    Ok(PointReport {
        point: *point,
        fidelity: spec.fidelity,
        hit_rate: stats.hit_rate(),
        kv_hit_rate: stats.kv_hit_rate(),
        non_compulsory_misses: stats.total.non_compulsory_misses,
        model_ape: 100.0 * (exact as f64 - model.sectors()).abs() / exact as f64,
        exact_sectors: exact,
        model,
        stats,
    })
}

/// Generates and simulates every sweep point.
pub fn run_simulate(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let start = Instant::now();
    let points = spec.points()?;
    let reports = points
        .par_iter()
        .map(|p| simulate_point(spec, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        tool_version: TOOL_VERSION.to_string(),
        spec_hash: spec.hash(),
        wall_time_ms: start.elapsed().as_millis(),
        spec: spec.clone(),
        points: reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparePoint {
    pub index: usize,
    pub baseline: PointReport,
    pub candidate: PointReport,
    pub reduction: ReductionReport,
    pub meets_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub tool_version: String,
    pub baseline_hash: String,
    pub candidate_hash: String,
    pub wall_time_ms: u128,
    pub baseline: ExperimentSpec,
    pub candidate: ExperimentSpec,
    /// Minimum fraction of non-compulsory misses the candidate must remove.
    pub threshold: f64,
    pub points: Vec<ComparePoint>,
    pub passed: bool,
}

/// Runs the same sweep under two scan/schedule choices and reports the
/// miss reduction at every point. A point without non-compulsory misses in
/// either run passes trivially.
pub fn run_compare(
    baseline: &ExperimentSpec,
    candidate: &ExperimentSpec,
    threshold: f64,
) -> Result<CompareReport> {
    let mut normalized = candidate.clone();
    normalized.scan = baseline.scan;
    normalized.schedule = baseline.schedule;
    if normalized != *baseline {
        return Err(Error::MismatchedInputs(
            "compared specs may differ only in scan order and schedule".into(),
        ));
    }
    if baseline.sweep.scan.is_some() {
        return Err(Error::MismatchedInputs("a scan sweep axis cannot be compared".into()));
    }
    let start = Instant::now();
    let base_points = baseline.points()?;
    let cand_points = candidate.points()?;
    let points = base_points
        .par_iter()
        .zip(cand_points.par_iter())
        .map(|(b, c)| {
            let (base, cand) = rayon::join(|| simulate_point(baseline, b), || simulate_point(candidate, c));
            let (base, cand) = (base?, cand?);
            let reduction = classify(&base.stats, &cand.stats)?;
            let meets_threshold = reduction
                .non_compulsory_reduction
                .map_or(reduction.candidate_non_compulsory == 0, |r| r >= threshold);
            Ok(ComparePoint { index: b.index, baseline: base, candidate: cand, reduction, meets_threshold })
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = points.iter().all(|p| p.meets_threshold);
    Ok(CompareReport {
        tool_version: TOOL_VERSION.to_string(),
        baseline_hash: baseline.hash(),
        candidate_hash: candidate.hash(),
        wall_time_ms: start.elapsed().as_millis(),
        baseline: baseline.clone(),
        candidate: candidate.clone(),
        threshold,
        points,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub seed: u64,
    pub traces: usize,
    pub max_events: usize,
    pub max_distinct: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { seed: 0, traces: 100, max_events: 10_000, max_distinct: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleMismatch {
    pub case: String,
    pub capacity: u64,
    pub simulated: u64,
    pub predicted: u64,
    pub keys: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleReport {
    pub config: OracleConfig,
    pub cases: usize,
    pub capacity_checks: u64,
    pub naive_mismatches: Vec<String>,
    pub mismatches: Vec<OracleMismatch>,
    pub passed: bool,
}

/// Random key stream mixing uniform draws with forward and backward sweeps,
/// so both short and long reuse distances show up.
pub fn random_trace(seed: u64, max_events: usize, max_distinct: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(0..=max_events);
    let distinct = rng.gen_range(1..=max_distinct.max(1));
    let mut keys = Vec::with_capacity(len);
    while keys.len() < len {
        let room = len - keys.len();
        match rng.gen_range(0..3) {
            0 => {
                let n = rng.gen_range(1..=room.min(64));
                keys.extend((0..n).map(|_| rng.gen_range(0..distinct)));
            }
            pattern => {
                let lo = rng.gen_range(0..distinct);
                let hi = rng.gen_range(lo..distinct) + 1;
                let run: Vec<u64> = if pattern == 1 { (lo..hi).collect() } else { (lo..hi).rev().collect() };
                keys.extend(run.into_iter().take(room));
            }
        }
    }
    keys
}

fn key_access(sector_id: u64) -> SectorAccess {
    SectorAccess { tensor: Tensor::K, kind: AccessKind::Read, cta: 0, wave: 0, sector_id }
}

fn check_case(
    case: String,
    keys: &[u64],
    capacities: std::ops::RangeInclusive<u64>,
    key_space: u64,
    expected: Option<&[u64]>,
    report: &mut OracleReport,
) {
    let hist = stack_distances(keys.iter().copied());
    if hist != stack_distances_naive(keys) {
        report.naive_mismatches.push(case.clone());
    }
    for capacity in capacities {
        let cache = CacheModel { capacity_bytes: capacity * 32, sector_bytes: 32, ..Default::default() };
        let options = SimOptions { key_space: Some(key_space), ..Default::default() };
        let simulated = simulate_sectors(keys.iter().map(|&k| key_access(k)), &cache, SimFidelity::SectorExact, options)
            .expect("sector-exact replay on a fully-associative cache cannot fail")
            .total
            .misses;
        let predicted = hist.misses_at_capacity(capacity).expect("uncapped histogram");
        let wanted = expected.map_or(predicted, |table| table[capacity as usize]);
        report.capacity_checks += 1;
        if simulated != predicted || simulated != wanted {
            report.mismatches.push(OracleMismatch {
                case: case.clone(),
                capacity,
                simulated,
                predicted,
                keys: keys.to_vec(),
            });
        }
    }
}

/// Cross-checks LRU simulation against stack-distance predictions at every
/// capacity, on seeded random traces plus fixed hand-computed cases.
pub fn run_oracle(config: OracleConfig) -> OracleReport {
    let mut report = OracleReport {
        config,
        cases: 0,
        capacity_checks: 0,
        naive_mismatches: Vec::new(),
        mismatches: Vec::new(),
        passed: false,
    };

    // Two passes over 8 keys: sawtooth misses 8 + (8 − c) for 0 < c < 8.
    let sawtooth: Vec<u64> = (0..8).chain((0..8).rev()).collect();
    let sawtooth_table = [16, 15, 14, 13, 12, 11, 10, 9, 8];
    check_case("sawtooth-8".into(), &sawtooth, 0..=8, 8, Some(&sawtooth_table), &mut report);
    let cyclic: Vec<u64> = (0..8).chain(0..8).collect();
    let cyclic_table = [16, 16, 16, 16, 16, 16, 16, 16, 8];
    check_case("cyclic-8".into(), &cyclic, 0..=8, 8, Some(&cyclic_table), &mut report);
    check_case("empty".into(), &[], 0..=8, 8, Some(&[0; 9]), &mut report);
    report.cases += 3;

    let fixed_checks = report.capacity_checks;
    let cases: Vec<OracleReport> = (0..config.traces)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i as u64);
            let keys = random_trace(seed, config.max_events, config.max_distinct);
            let mut local = OracleReport { cases: 1, capacity_checks: 0, ..report.clone() };
            local.mismatches.clear();
            local.naive_mismatches.clear();
            check_case(format!("random seed={seed}"), &keys, 0..=config.max_distinct, config.max_distinct, None, &mut local);
            local
        })
        .collect();
    for c in cases {
        report.cases += c.cases;
        report.capacity_checks += c.capacity_checks;
        report.mismatches.extend(c.mismatches);
        report.naive_mismatches.extend(c.naive_mismatches);
    }
    debug_assert!(report.capacity_checks >= fixed_checks);
    report.passed = report.mismatches.is_empty() && report.naive_mismatches.is_empty();
    report
}

/// `# tool_version=… spec_hash=…` and `# spec={json}` header lines.
pub fn write_csv_preamble<W: Write + ?Sized>(out: &mut W, hash: &str, spec_json: &str) -> Result<()> {
    writeln!(out, "# tool_version={TOOL_VERSION} spec_hash={hash}")?;
    writeln!(out, "# spec={spec_json}")?;
    Ok(())
}

pub fn write_model_csv<W: Write>(mut out: W, spec: &ExperimentSpec, rows: &[ModelRow]) -> Result<()> {
    write_csv_preamble(&mut out, &spec.hash(), &serde_json::to_string(spec)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["S", "T", "B", "causal", "model_M", "exact_M", "mape_running"])?;
    for r in rows {
        w.write_record([
            r.seq_len.to_string(),
            r.tile.to_string(),
            r.batch.to_string(),
            r.causal.to_string(),
            format!("{:.4}", r.model_m),
            r.exact_m.map(|m| m.to_string()).unwrap_or_default(),
            r.mape_running.map(|m| format!("{m:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn scan_name(scan: ScanOrder) -> &'static str {
    match scan {
        ScanOrder::Cyclic => "cyclic",
        ScanOrder::Sawtooth => "sawtooth",
    }
}

pub fn write_simulate_csv<W: Write>(mut out: W, report: &ExperimentReport) -> Result<()> {
    write_csv_preamble(&mut out, &report.spec_hash, &serde_json::to_string(&report.spec)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "index", "S", "T", "D", "E", "B", "H", "causal", "n_sm", "l2_bytes", "scan", "accesses",
        "hits", "misses", "compulsory", "non_compulsory", "hit_rate", "kv_hit_rate", "model_M",
        "exact_M",
    ])?;
    for p in &report.points {
        let (c, m, s) = (&p.point.config, &p.point.cache, &p.stats.total);
        w.write_record([
            p.point.index.to_string(),
            c.seq_len.to_string(),
            c.tile.to_string(),
            c.head_dim.to_string(),
            c.elem_bytes.to_string(),
            c.batch.to_string(),
            c.heads.to_string(),
            c.causal.to_string(),
            m.n_sm.to_string(),
            m.capacity_bytes.to_string(),
            scan_name(p.point.scan).to_string(),
            s.accesses.to_string(),
            s.hits.to_string(),
            s.misses.to_string(),
            s.compulsory_misses.to_string(),
            s.non_compulsory_misses.to_string(),
            format!("{:.6}", p.hit_rate),
            format!("{:.6}", p.kv_hit_rate),
            format!("{:.4}", p.model.sectors()),
            p.exact_sectors.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_compare_csv<W: Write>(mut out: W, report: &CompareReport) -> Result<()> {
    write_csv_preamble(&mut out, &report.baseline_hash, &serde_json::to_string(&report.baseline)?)?;
    writeln!(out, "# candidate_hash={} candidate={}", report.candidate_hash, serde_json::to_string(&report.candidate)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "index", "S", "B", "n_sm", "baseline_non_compulsory", "candidate_non_compulsory",
        "non_compulsory_reduction_pct", "baseline_misses", "candidate_misses",
        "miss_reduction_pct", "meets_threshold",
    ])?;
    let pct = |r: Option<f64>| r.map(|r| format!("{:.4}", 100.0 * r)).unwrap_or_default();
    for p in &report.points {
        let c = &p.baseline.point.config;
        w.write_record([
            p.index.to_string(),
            c.seq_len.to_string(),
            c.batch.to_string(),
            p.baseline.point.cache.n_sm.to_string(),
            p.reduction.baseline_non_compulsory.to_string(),
            p.reduction.candidate_non_compulsory.to_string(),
            pct(p.reduction.non_compulsory_reduction),
            p.reduction.baseline_misses.to_string(),
            p.reduction.candidate_misses.to_string(),
            pct(p.reduction.miss_reduction),
            p.meets_threshold.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
