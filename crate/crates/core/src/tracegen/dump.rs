//! Binary trace dump and its JSON sidecar.
//!
//! Each record is 16 bytes, little-endian:
//!
//! | offset | size | field     |
//! |--------|------|-----------|
//! | 0      | 1    | tensor (0=Q, 1=K, 2=V, 3=O) |
//! | 1      | 1    | kind (0=read, 1=write) |
//! | 2      | 2    | cta       |
//! | 4      | 4    | wave      |
//! | 8      | 8    | sector_id |

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::{AccessKind, SectorAccess, Tensor, TraceTotals};
use crate::error::{Error, Result};
use crate::model::{AttentionConfig, CacheModel, ScanOrder, SchedulePolicy};

pub const RECORD_BYTES: usize = 16;
pub const FORMAT: &str = "wavecache-trace-v1";

pub fn encode(access: &SectorAccess) -> Result<[u8; RECORD_BYTES]> {
    let cta = u16::try_from(access.cta)
        .map_err(|_| Error::DumpOverflow { field: "cta", value: u64::from(access.cta) })?;
    let wave = u32::try_from(access.wave)
        .map_err(|_| Error::DumpOverflow { field: "wave", value: access.wave })?;
    let mut buf = [0u8; RECORD_BYTES];
    buf[0] = access.tensor as u8;
    buf[1] = match access.kind {
        AccessKind::Read => 0,
        AccessKind::Write => 1,
    };
    buf[2..4].copy_from_slice(&cta.to_le_bytes());
    buf[4..8].copy_from_slice(&wave.to_le_bytes());
    buf[8..16].copy_from_slice(&access.sector_id.to_le_bytes());
    Ok(buf)
}

pub fn decode(buf: &[u8; RECORD_BYTES]) -> Result<SectorAccess> {
    let tensor = Tensor::from_index(buf[0])
        .ok_or_else(|| Error::MalformedDump(format!("tensor code {}", buf[0])))?;
    let kind = match buf[1] {
        0 => AccessKind::Read,
        1 => AccessKind::Write,
        other => return Err(Error::MalformedDump(format!("kind code {other}"))),
    };
    Ok(SectorAccess {
        tensor,
        kind,
        cta: u32::from(u16::from_le_bytes([buf[2], buf[3]])),
        wave: u64::from(u32::from_le_bytes(buf[4..8].try_into().unwrap())),
        sector_id: u64::from_le_bytes(buf[8..16].try_into().unwrap()),
    })
}

/// Writes every access; returns the record count.
pub fn write_records<W, I>(mut out: W, accesses: I) -> Result<u64>
where
    W: Write,
    I: IntoIterator<Item = SectorAccess>,
{
    let mut n = 0;
    for a in accesses {
        out.write_all(&encode(&a)?)?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Streams records back from a dump.
pub struct RecordReader<R> {
    inner: R,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<SectorAccess>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.inner.fill_buf() {
            Ok([]) => return None,
            Ok(_) => {}
            Err(e) => return Some(Err(e.into())),
        }
        let mut buf = [0u8; RECORD_BYTES];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => Some(decode(&buf)),
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Some(Err(Error::MalformedDump("truncated record".into())))
            }
            Err(e) => Some(Err(e.into())),
        }
    }
}

/// Reads a whole dump into memory.
pub fn read_records<R: Read>(input: R) -> Result<Vec<SectorAccess>> {
    RecordReader::new(io::BufReader::new(input)).collect()
}

/// Metadata written next to a dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub record_bytes: usize,
    pub config: AttentionConfig,
    pub cache: CacheModel,
    pub schedule: SchedulePolicy,
    pub scan: ScanOrder,
    pub records: u64,
    pub totals: TraceTotals,
}

impl Sidecar {
    pub fn new(
        config: AttentionConfig,
        cache: CacheModel,
        schedule: SchedulePolicy,
        scan: ScanOrder,
        records: u64,
        totals: TraceTotals,
    ) -> Self {
        Self {
            format: FORMAT.to_string(),
            record_bytes: RECORD_BYTES,
            config,
            cache,
            schedule,
            scan,
            records,
            totals,
        }
    }
}

/// `tensor,sectors` rows followed by a `total` row.
pub fn write_totals_csv<W: Write>(out: W, totals: &TraceTotals) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tensor", "sectors"])?;
    for t in Tensor::ALL {
        w.write_record([t.name(), &totals.get(t).to_string()])?;
    }
    w.write_record(["total", &totals.total().to_string()])?;
    w.flush()?;
    Ok(())
}
