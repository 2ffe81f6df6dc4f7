//! `wavecache`: sweeps, simulations, scan-order comparisons and oracle
//! checks over tiled attention L2 traces.
//!
//! Exit status: 0 on success, 1 on errors or oracle mismatches, 2 when a
//! comparison misses its reduction threshold.

mod args;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use wavecache::experiment::{
    run_compare, run_model, run_oracle, run_simulate, write_compare_csv, write_csv_preamble,
    write_model_csv, write_simulate_csv, ExperimentSpec, OracleConfig, TOOL_VERSION,
};
use wavecache::prelude::*;
use wavecache::tracegen::dump::{self, Sidecar};

use args::{Format, OutputArgs, ScanArg, ScheduleArg, SpecArgs};

#[derive(Parser)]
#[command(name = "wavecache", version, about = "L2 cache laboratory for tiled attention traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the closed-form sector model over a sweep.
    Model {
        #[command(flatten)]
        spec: SpecArgs,
        /// Also count the exact trace sectors at every point.
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Generate traces and run them through the cache model.
    Simulate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Replay a binary trace dump instead of generating one.
        #[arg(long, value_name = "DUMP")]
        trace: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// A/B two scan orders or schedules on the same sweep.
    Compare {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_enum)]
        candidate_scan: Option<ScanArg>,
        #[arg(long, value_enum)]
        candidate_schedule: Option<ScheduleArg>,
        /// Full candidate spec; must differ from the baseline only in scan
        /// order and schedule.
        #[arg(long, value_name = "FILE", conflicts_with_all = ["candidate_scan", "candidate_schedule"])]
        candidate_spec: Option<PathBuf>,
        /// Minimum fraction of non-compulsory misses the candidate removes.
        #[arg(long, default_value_t = 0.45)]
        threshold: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Cross-check LRU simulation against stack distances on random traces.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        traces: usize,
        #[arg(long, default_value_t = 10_000)]
        max_events: usize,
        #[arg(long, default_value_t = 256)]
        max_distinct: u64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Write a binary sector trace with a JSON sidecar and per-tensor totals.
    Dump {
        #[command(flatten)]
        spec: SpecArgs,
        /// Binary output path; defaults to the output directory.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long, env = "WAVECACHE_OUT_DIR", value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// LRU stack-distance histogram of a generated or dumped trace.
    Histogram {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_name = "DUMP")]
        trace: Option<PathBuf>,
        /// Use tile-block ids instead of sector ids.
        #[arg(long, conflicts_with = "trace")]
        blocks: bool,
        /// Distances at or above this land in one overflow bucket.
        #[arg(long)]
        cap: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Model { spec, exact, out } => model(&spec.resolve()?, exact, &out),
        Command::Simulate { spec, trace: Some(path), out } => replay(&spec.resolve_single()?, &path, &out),
        Command::Simulate { spec, trace: None, out } => simulate(&spec.resolve()?, &out),
        Command::Compare { spec, candidate_scan, candidate_schedule, candidate_spec, threshold, out } => {
            let baseline = spec.resolve()?;
            let candidate = match candidate_spec {
                Some(path) => ExperimentSpec::from_json(&fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?,
                None => {
                    let mut c = baseline.clone();
                    match (candidate_scan, candidate_schedule) {
                        (None, None) => c.scan = ScanOrder::Sawtooth,
                        (scan, sched) => {
                            if let Some(s) = scan {
                                c.scan = s.into();
                            }
                            if let Some(s) = sched {
                                c.schedule.kind = s.into();
                            }
                        }
                    }
                    c
                }
            };
            compare(&baseline, &candidate, threshold, &out)
        }
        Command::Oracle { seed, traces, max_events, max_distinct, out } => {
            oracle(OracleConfig { seed, traces, max_events, max_distinct }, &out)
        }
        Command::Dump { spec, out, out_dir } => dump_trace(&spec.resolve_single()?, out, out_dir),
        Command::Histogram { spec, trace, blocks, cap, out } => {
            histogram(&spec.resolve_single()?, trace.as_deref(), blocks, cap, &out)
        }
    }
}

fn short(hash: &str) -> &str {
    &hash[..12]
}

/// Opens the report destination and hands it to `write`.
fn emit(path: Option<PathBuf>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut f = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
            write(&mut f)?;
            f.flush()?;
            eprintln!("wrote {}", p.display());
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct ModelReport<'a> {
    tool_version: &'a str,
    spec_hash: String,
    spec: &'a ExperimentSpec,
    rows: Vec<wavecache::experiment::ModelRow>,
}

fn model(spec: &ExperimentSpec, exact: bool, out: &OutputArgs) -> Result<ExitCode> {
    let rows = run_model(spec, exact)?;
    let hash = spec.hash();
    emit(out.path(&format!("model-{}", short(&hash))), |w| match out.format {
        Format::Csv => Ok(write_model_csv(w, spec, &rows)?),
        Format::Json => json(w, &ModelReport { tool_version: TOOL_VERSION, spec_hash: hash.clone(), spec, rows }),
    })?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(spec: &ExperimentSpec, out: &OutputArgs) -> Result<ExitCode> {
    let report = run_simulate(spec)?;
    for p in &report.points {
        eprintln!(
            "point {}: S={} B={} n_sm={} misses={} non_compulsory={} kv_hit_rate={:.4}",
            p.point.index,
            p.point.config.seq_len,
            p.point.config.batch,
            p.point.cache.n_sm,
            p.stats.total.misses,
            p.non_compulsory_misses,
            p.kv_hit_rate
        );
    }
    emit(out.path(&format!("simulate-{}", short(&report.spec_hash))), |w| match out.format {
        Format::Csv => Ok(write_simulate_csv(w, &report)?),
        Format::Json => json(w, &report),
    })?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ReplayReport<'a> {
    tool_version: &'a str,
    spec_hash: String,
    spec: &'a ExperimentSpec,
    trace: String,
    records: u64,
    hit_rate: f64,
    kv_hit_rate: f64,
    stats: CacheStats,
}

fn replay(spec: &ExperimentSpec, path: &Path, out: &OutputArgs) -> Result<ExitCode> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = dump::read_records(file)?;
    let options = SimOptions { wave_series: spec.wave_series, ..Default::default() };
    let stats = simulate_sectors(records.iter().copied(), &spec.cache, spec.fidelity, options)?;
    let report = ReplayReport {
        tool_version: TOOL_VERSION,
        spec_hash: spec.hash(),
        spec,
        trace: path.display().to_string(),
        records: records.len() as u64,
        hit_rate: stats.hit_rate(),
        kv_hit_rate: stats.kv_hit_rate(),
        stats,
    };
    emit(out.path(&format!("replay-{}", short(&report.spec_hash))), |w| match out.format {
        Format::Json => json(w, &report),
        Format::Csv => {
            write_csv_preamble(w, &report.spec_hash, &serde_json::to_string(spec)?)?;
            let t = &report.stats.total;
            writeln!(w, "trace,records,accesses,hits,misses,compulsory,non_compulsory,hit_rate,kv_hit_rate")?;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:.6},{:.6}",
                report.trace, report.records, t.accesses, t.hits, t.misses, t.compulsory_misses,
                t.non_compulsory_misses, report.hit_rate, report.kv_hit_rate
            )?;
            Ok(())
        }
    })?;
    Ok(ExitCode::SUCCESS)
}

fn compare(baseline: &ExperimentSpec, candidate: &ExperimentSpec, threshold: f64, out: &OutputArgs) -> Result<ExitCode> {
    let report = run_compare(baseline, candidate, threshold)?;
    for p in &report.points {
        let c = &p.baseline.point.config;
        let r = &p.reduction;
        let reduction = match r.non_compulsory_reduction {
            Some(x) => format!("{:.2}%", 100.0 * x),
            None => r.note.clone().unwrap_or_default(),
        };
        eprintln!(
            "point {}: S={} B={} non_compulsory {} -> {} ({reduction}) {}",
            p.index,
            c.seq_len,
            c.batch,
            r.baseline_non_compulsory,
            r.candidate_non_compulsory,
            if p.meets_threshold { "ok" } else { "below threshold" }
        );
    }
    emit(out.path(&format!("compare-{}", short(&report.baseline_hash))), |w| match out.format {
        Format::Csv => Ok(write_compare_csv(w, &report)?),
        Format::Json => json(w, &report),
    })?;
    if report.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("reduction below {:.1}% at one or more points", 100.0 * threshold);
        Ok(ExitCode::from(2))
    }
}

fn oracle(config: OracleConfig, out: &OutputArgs) -> Result<ExitCode> {
    let report = run_oracle(config);
    let stem = format!("oracle-seed-{}", config.seed);
    emit(out.path(&stem), |w| match out.format {
        Format::Json => json(w, &report),
        Format::Csv => {
            writeln!(w, "# tool_version={TOOL_VERSION} seed={}", config.seed)?;
            writeln!(w, "# oracle={}", serde_json::to_string(&config)?)?;
            writeln!(w, "cases,capacity_checks,mismatches,naive_mismatches,passed")?;
            writeln!(
                w,
                "{},{},{},{},{}",
                report.cases,
                report.capacity_checks,
                report.mismatches.len(),
                report.naive_mismatches.len(),
                report.passed
            )?;
            Ok(())
        }
    })?;
    if report.passed {
        eprintln!("oracle: {} cases, {} capacity checks, all agree", report.cases, report.capacity_checks);
        return Ok(ExitCode::SUCCESS);
    }
    let dir = out.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    let mut seen = std::collections::BTreeSet::new();
    for m in &report.mismatches {
        eprintln!(
            "mismatch in {} at capacity {}: simulated {} predicted {}",
            m.case, m.capacity, m.simulated, m.predicted
        );
        if seen.insert(m.case.clone()) {
            let name: String = m.case.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect();
            let path = dir.join(format!("oracle-mismatch-{name}.txt"));
            let body: String = m.keys.iter().map(|k| format!("{k}\n")).collect();
            fs::write(&path, body)?;
            eprintln!("offending trace written to {}", path.display());
        }
    }
    for case in &report.naive_mismatches {
        eprintln!("fast and naive stack distances disagree on {case}");
    }
    eprintln!("repro: wavecache oracle --seed {} --traces {}", config.seed, config.traces);
    Ok(ExitCode::FAILURE)
}

fn trace_for(spec: &ExperimentSpec) -> Result<AccessTrace> {
    let point = spec.points()?.remove(0);
    Ok(AccessTrace::new(&point.config, &point.cache, &point.schedule, point.scan)?)
}

fn dump_trace(spec: &ExperimentSpec, out: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<ExitCode> {
    let trace = trace_for(spec)?;
    trace.check_cap(spec.max_trace_events)?;
    let path = match (out, out_dir) {
        (Some(p), _) => p,
        (None, Some(d)) => d.join(format!("trace-{}.bin", short(&spec.hash()))),
        (None, None) => bail!("dump needs --out or an output directory"),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    let records = dump::write_records(&mut w, trace.sectors())?;
    w.flush()?;
    let totals = trace.expected_totals();
    let sidecar = Sidecar::new(*trace.config(), spec.cache, *trace.schedule(), trace.scan(), records, totals);
    let side_path = with_suffix(&path, ".json");
    fs::write(&side_path, serde_json::to_string_pretty(&sidecar)? + "\n")?;
    let totals_path = with_suffix(&path, ".totals.csv");
    dump::write_totals_csv(File::create(&totals_path)?, &totals)?;
    eprintln!(
        "wrote {records} records to {}, sidecar {}, totals {}",
        path.display(),
        side_path.display(),
        totals_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Serialize)]
struct HistogramReport<'a> {
    tool_version: &'a str,
    spec_hash: String,
    spec: &'a ExperimentSpec,
    source: String,
    histogram: DistanceHistogram,
}

fn histogram(
    spec: &ExperimentSpec,
    dump_path: Option<&Path>,
    blocks: bool,
    cap: Option<u64>,
    out: &OutputArgs,
) -> Result<ExitCode> {
    let (keys, source): (Vec<u64>, String) = match dump_path {
        Some(p) => {
            let records = dump::read_records(File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
            (records.iter().map(|r| r.sector_id).collect(), p.display().to_string())
        }
        None => {
            let trace = trace_for(spec)?;
            if blocks {
                (trace.tiles().map(|t| t.block).collect(), "generated tile blocks".into())
            } else {
                trace.check_cap(spec.max_trace_events)?;
                (trace.sectors().map(|s| s.sector_id).collect(), "generated sectors".into())
            }
        }
    };
    let hist = wavecache::rdist::stack_distances_capped(keys, cap);
    let hash = spec.hash();
    emit(out.path(&format!("histogram-{}", short(&hash))), |w| match out.format {
        Format::Csv => {
            write_csv_preamble(w, &hash, &serde_json::to_string(spec)?)?;
            writeln!(w, "# source={source}")?;
            Ok(hist.write_csv(w)?)
        }
        Format::Json => json(
            w,
            &HistogramReport { tool_version: TOOL_VERSION, spec_hash: hash.clone(), spec, source, histogram: hist },
        ),
    })?;
    Ok(ExitCode::SUCCESS)
}
