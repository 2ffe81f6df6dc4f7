use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use wavecache::experiment::ExperimentSpec;
use wavecache::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Persistent,
    Nonpersistent,
    Contiguous,
    Tilestep2,
}

impl From<ScheduleArg> for ScheduleKind {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Persistent => ScheduleKind::PersistentRoundRobin,
            ScheduleArg::Nonpersistent => ScheduleKind::NonPersistent,
            ScheduleArg::Contiguous => ScheduleKind::PersistentContiguous,
            ScheduleArg::Tilestep2 => ScheduleKind::TileStep2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScanArg {
    Cyclic,
    Sawtooth,
}

impl From<ScanArg> for ScanOrder {
    fn from(s: ScanArg) -> Self {
        match s {
            ScanArg::Cyclic => ScanOrder::Cyclic,
            ScanArg::Sawtooth => ScanOrder::Sawtooth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FidelityArg {
    Sector,
    Tileblock,
}

impl From<FidelityArg> for SimFidelity {
    fn from(f: FidelityArg) -> Self {
        match f {
            FidelityArg::Sector => SimFidelity::SectorExact,
            FidelityArg::Tileblock => SimFidelity::TileBlock,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Comma-separated values given as one flag argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct List<T>(pub Vec<T>);

/// Parses `a,b,c` items where each item is an integer or an inclusive
/// `start:stop:step` range.
pub fn parse_list(text: &str) -> Result<List<u64>, String> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        let num = |s: &str| s.parse::<u64>().map_err(|e| format!("`{s}`: {e}"));
        match parts.as_slice() {
            [v] => out.push(num(v)?),
            [a, b, step] => {
                let (a, b, step) = (num(a)?, num(b)?, num(step)?);
                if step == 0 || a > b {
                    return Err(format!("bad range `{item}`"));
                }
                out.extend((a..=b).step_by(step as usize));
            }
            _ => return Err(format!("expected N or START:STOP:STEP, got `{item}`")),
        }
    }
    Ok(List(out))
}

fn parse_scans(text: &str) -> Result<List<ScanOrder>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| ScanArg::from_str(s, true).map(ScanOrder::from))
        .collect::<Result<_, _>>()
        .map(List)
}

/// Workload, cache and sweep flags. Every flag overrides the matching field
/// of `--spec`.
#[derive(Debug, Clone, Default, Args)]
pub struct SpecArgs {
    /// JSON experiment spec; flags override its fields.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seq_len: Option<u64>,
    #[arg(long)]
    pub tile: Option<u64>,
    #[arg(long)]
    pub head_dim: Option<u64>,
    #[arg(long)]
    pub elem_bytes: Option<u64>,
    #[arg(long)]
    pub batch: Option<u64>,
    #[arg(long)]
    pub heads: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub causal: Option<bool>,
    /// Number of SMs.
    #[arg(long = "sm")]
    pub n_sm: Option<u32>,
    #[arg(long)]
    pub l2_bytes: Option<u64>,
    #[arg(long)]
    pub sector_bytes: Option<u64>,
    /// Ways per set; 0 means fully associative.
    #[arg(long)]
    pub ways: Option<u32>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub grid_size: Option<u64>,
    #[arg(long, value_enum)]
    pub scan: Option<ScanArg>,
    #[arg(long, value_enum)]
    pub fidelity: Option<FidelityArg>,
    /// Sequence lengths to sweep, e.g. `8192:131072:8192`.
    #[arg(long, value_parser = parse_list)]
    pub sweep_seq_len: Option<List<u64>>,
    #[arg(long, value_parser = parse_list)]
    pub sweep_sm: Option<List<u64>>,
    #[arg(long, value_parser = parse_list)]
    pub sweep_batch: Option<List<u64>>,
    #[arg(long, value_parser = parse_scans)]
    pub sweep_scan: Option<List<ScanOrder>>,
    #[arg(long)]
    pub max_points: Option<usize>,
    /// Largest sector-exact trace a point may generate.
    #[arg(long)]
    pub max_trace_events: Option<u64>,
    /// Record a per-wave hit-rate series in JSON reports.
    #[arg(long)]
    pub wave_series: bool,
}

impl SpecArgs {
    pub fn resolve(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentSpec::default(),
        };
        let c = &mut spec.config;
        set(&mut c.seq_len, self.seq_len);
        set(&mut c.tile, self.tile);
        set(&mut c.head_dim, self.head_dim);
        set(&mut c.elem_bytes, self.elem_bytes);
        set(&mut c.batch, self.batch);
        set(&mut c.heads, self.heads);
        set(&mut c.causal, self.causal);
        let m = &mut spec.cache;
        set(&mut m.n_sm, self.n_sm);
        set(&mut m.capacity_bytes, self.l2_bytes);
        set(&mut m.sector_bytes, self.sector_bytes);
        if let Some(w) = self.ways {
            m.associativity = if w == 0 { Associativity::Full } else { Associativity::Ways(w) };
        }
        if let Some(s) = self.schedule {
            spec.schedule.kind = s.into();
        }
        if self.grid_size.is_some() {
            spec.schedule.grid_size = self.grid_size;
        }
        set(&mut spec.scan, self.scan.map(Into::into));
        set(&mut spec.fidelity, self.fidelity.map(Into::into));
        if let Some(v) = &self.sweep_seq_len {
            spec.sweep.seq_len = Some(v.0.clone());
        }
        if let Some(v) = &self.sweep_sm {
            let sms = v.0.iter().map(|&n| u32::try_from(n)).collect::<Result<Vec<_>, _>>()?;
            spec.sweep.n_sm = Some(sms);
        }
        if let Some(v) = &self.sweep_batch {
            spec.sweep.batch = Some(v.0.clone());
        }
        if let Some(v) = &self.sweep_scan {
            spec.sweep.scan = Some(v.0.clone());
        }
        set(&mut spec.max_points, self.max_points);
        set(&mut spec.max_trace_events, self.max_trace_events);
        spec.wave_series |= self.wave_series;
        Ok(spec)
    }

    /// Resolves a spec that must describe exactly one point.
    pub fn resolve_single(&self) -> Result<ExperimentSpec> {
        let spec = self.resolve()?;
        let points = spec.points()?;
        if points.len() != 1 {
            bail!("this command takes a single point, the spec sweeps {}", points.len());
        }
        Ok(spec)
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; stdout when absent and no output directory is set.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Directory for reports written without `--out`.
    #[arg(long, env = "WAVECACHE_OUT_DIR", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

impl OutputArgs {
    /// `--out`, else `<out-dir>/<stem>.<ext>`, else `None` for stdout.
    pub fn path(&self, stem: &str) -> Option<PathBuf> {
        let ext = match self.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        self.out.clone().or_else(|| self.out_dir.as_ref().map(|d| d.join(format!("{stem}.{ext}"))))
    }
}
