//! Trace ingestion and commercial-stop removal.
//!
//! Stops are found with a running tally of consecutive fixes that each lie
//! within `d_max_m` of their predecessor. A run whose length exceeds `n_max`
//! is a stop and every fix in it is invalidated; the trace is then cut at the
//! invalid fixes.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{geodesic_distance, GeoPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct GpsFix {
    /// Unix time, seconds.
    pub t: i64,
    pub pos: GeoPoint,
    pub vehicle_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub vehicle_id: String,
    pub fixes: Vec<GpsFix>,
}

impl Trace {
    /// Builds a trace from fixes of a single vehicle, sorting them by time.
    pub fn new(vehicle_id: impl Into<String>, mut fixes: Vec<GpsFix>) -> Result<Self> {
        let vehicle_id = vehicle_id.into();
        fixes.sort_by_key(|f| f.t);
        for f in &fixes {
            if f.vehicle_id != vehicle_id {
                return Err(Error::InvalidInput(format!(
                    "fix of vehicle {} in trace of {vehicle_id}",
                    f.vehicle_id
                )));
            }
            if f.t <= 0 {
                return Err(Error::InvalidInput(format!("non-positive timestamp {}", f.t)));
            }
        }
        if let Some(w) = fixes.windows(2).find(|w| w[0].t == w[1].t) {
            return Err(Error::InvalidInput(format!(
                "duplicate timestamp {} for vehicle {vehicle_id}",
                w[0].t
            )));
        }
        Ok(Trace { vehicle_id, fixes })
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopDetectorConfig {
    pub d_max_m: f64,
    pub n_max: usize,
}

impl Default for StopDetectorConfig {
    fn default() -> Self {
        StopDetectorConfig {
            d_max_m: 50.0,
            n_max: 2,
        }
    }
}

impl StopDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max_m > 0.0 && self.d_max_m.is_finite()) {
            return Err(Error::Config(format!("d_max_m must be > 0, got {}", self.d_max_m)));
        }
        if self.n_max < 2 {
            return Err(Error::Config(format!("n_max must be >= 2, got {}", self.n_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionLabel {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionLabels {
    pub labels: Vec<MotionLabel>,
}

impl MotionLabels {
    pub fn invalid_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == MotionLabel::Invalid)
            .count()
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    vehicle_id: String,
    timestamp: i64,
    lat: f64,
    lon: f64,
}

pub const TRACE_CSV_HEADER: [&str; 4] = ["vehicle_id", "timestamp", "lat", "lon"];

/// Parses trace CSV text into one time-sorted trace per vehicle, ordered by
/// vehicle id.
pub fn parse_traces_from_reader<R: Read>(reader: R) -> Result<Vec<Trace>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != TRACE_CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", TRACE_CSV_HEADER.join(",")),
        });
    }

    let mut by_vehicle: BTreeMap<String, Vec<GpsFix>> = BTreeMap::new();
    let mut seen: HashSet<(String, i64)> = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: CsvRow = record.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let pos = GeoPoint::new(row.lat, row.lon).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if row.timestamp <= 0 {
            return Err(Error::Parse {
                line,
                msg: format!("timestamp {} must be positive", row.timestamp),
            });
        }
        if !seen.insert((row.vehicle_id.clone(), row.timestamp)) {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "duplicate fix for vehicle {} at {}",
                    row.vehicle_id, row.timestamp
                ),
            });
        }
        by_vehicle.entry(row.vehicle_id.clone()).or_default().push(GpsFix {
            t: row.timestamp,
            pos,
            vehicle_id: row.vehicle_id,
        });
    }
    by_vehicle
        .into_iter()
        .map(|(id, fixes)| Trace::new(id, fixes))
        .collect()
}

pub fn parse_traces(path: impl AsRef<Path>) -> Result<Vec<Trace>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_traces_from_reader(std::io::BufReader::new(file))
}

/// Writes traces in the CSV format read by [`parse_traces`]. Coordinates
/// carry ten decimal places.
pub fn write_traces<W: Write>(out: W, traces: &[Trace]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "{}", TRACE_CSV_HEADER.join(","))?;
    for trace in traces {
        for f in &trace.fixes {
            writeln!(
                w,
                "{},{},{:.10},{:.10}",
                f.vehicle_id,
                f.t,
                f.pos.lat(),
                f.pos.lon()
            )?;
        }
    }
    w.flush()
}

pub fn detect_stops(trace: &Trace, cfg: &StopDetectorConfig) -> MotionLabels {
    let n = trace.fixes.len();
    let mut labels = vec![MotionLabel::Valid; n];
    if n == 0 {
        return MotionLabels { labels };
    }
    let close_run = |start: usize, end: usize, labels: &mut [MotionLabel]| {
        if end - start > cfg.n_max {
            labels[start..end].fill(MotionLabel::Invalid);
        }
    };
    let mut run_start = 0;
    for i in 1..n {
        let d = geodesic_distance(trace.fixes[i - 1].pos, trace.fixes[i].pos);
        if d >= cfg.d_max_m {
            close_run(run_start, i, &mut labels);
            run_start = i;
        }
    }
    close_run(run_start, n, &mut labels);
    MotionLabels { labels }
}

/// Cuts a trace into maximal runs of valid fixes, dropping runs of fewer
/// than two fixes.
pub fn split_at_stops(trace: &Trace, labels: &MotionLabels) -> Result<Vec<Trace>> {
    if labels.labels.len() != trace.fixes.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} fixes",
            labels.labels.len(),
            trace.fixes.len()
        )));
    }
    let mut out = Vec::new();
    let mut current: Vec<GpsFix> = Vec::new();
    let mut flush = |current: &mut Vec<GpsFix>| {
        if current.len() >= 2 {
            out.push(Trace {
                vehicle_id: trace.vehicle_id.clone(),
                fixes: std::mem::take(current),
            });
        } else {
            current.clear();
        }
    };
    for (fix, label) in trace.fixes.iter().zip(&labels.labels) {
        match label {
            MotionLabel::Valid => current.push(fix.clone()),
            MotionLabel::Invalid => flush(&mut current),
        }
    }
    flush(&mut current);
    Ok(out)
}
