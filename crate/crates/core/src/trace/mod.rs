//! FaaS trace ingestion.
//!
//! Two CSV schemas are understood:
//!
//! * the raw per-minute invocation table (`HashOwner,HashApp,HashFunction,Trigger,1,…,1440`),
//!   one file per trace day;
//! * the prepared arrival table (`Func_index,HashOwner,HashApp,Func_ID,Average,ArrivalMinute`),
//!   one row per provisioned function instance.
//!
//! An [`ArrivalDataset`] is always kept in canonical form: records sorted by
//! `(arrival_minute, func_id, func_index)`, function ids dense in `0..vocab_size`
//! and `instance_count_so_far` recomputed from the sorted order.

mod derive;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use derive::{derive_instances, derive_instances_with, parse_durations, DurationTable, DEFAULT_EXEC_MS};
pub use synth::{synth_trace, GapLaw, Layout, SynthConfig};

/// Minutes in one trace day.
pub const MINUTES_PER_DAY: usize = 1440;
/// Length of the public trace (14 days).
pub const DEFAULT_TIMELINE_MINUTES: u64 = 14 * MINUTES_PER_DAY as u64;

const PREPARED_COLUMNS: [&str; 6] = [
    "Func_index",
    "HashOwner",
    "HashApp",
    "Func_ID",
    "Average",
    "ArrivalMinute",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("bad header: expected columns {expected:?}, found {found:?}")]
    Header {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("line {line}: negative or non-finite Average {value}")]
    NegativeAverage { line: u64, value: f64 },
    #[error("duplicate instance (func_id {func_id}, func_index {func_index})")]
    DuplicateInstance { func_id: u64, func_index: u32 },
    #[error("unknown trigger class {0:?}")]
    UnknownTrigger(String),
    #[error("invocation row has {0} minute counts, expected 1440")]
    CountLength(usize),
    #[error("gap variance undefined: no function has at least two records")]
    UndefinedVariance,
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Trigger classes of the public trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trigger {
    Http,
    Event,
    Queue,
    Timer,
    Orchestration,
    Storage,
    Other,
}

impl FromStr for Trigger {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "http" => Ok(Trigger::Http),
            "event" => Ok(Trigger::Event),
            "queue" => Ok(Trigger::Queue),
            "timer" => Ok(Trigger::Timer),
            "orchestration" => Ok(Trigger::Orchestration),
            "storage" => Ok(Trigger::Storage),
            "others" | "other" => Ok(Trigger::Other),
            _ => Err(TraceError::UnknownTrigger(s.to_string())),
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Trigger::Http => "http",
            Trigger::Event => "event",
            Trigger::Queue => "queue",
            Trigger::Timer => "timer",
            Trigger::Orchestration => "orchestration",
            Trigger::Storage => "storage",
            Trigger::Other => "others",
        };
        f.write_str(s)
    }
}

/// One function's invocation counts for one trace day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInvocationRow {
    pub owner_hash: String,
    pub app_hash: String,
    pub func_hash: String,
    pub trigger: Trigger,
    /// Zero-based trace day; minute `m` of this row sits at `day * 1440 + m`.
    pub day: u32,
    per_minute_counts: Vec<u32>,
}

impl RawInvocationRow {
    pub fn new(
        owner_hash: impl Into<String>,
        app_hash: impl Into<String>,
        func_hash: impl Into<String>,
        trigger: Trigger,
        day: u32,
        per_minute_counts: Vec<u32>,
    ) -> Result<Self, TraceError> {
        if per_minute_counts.len() != MINUTES_PER_DAY {
            return Err(TraceError::CountLength(per_minute_counts.len()));
        }
        Ok(Self {
            owner_hash: owner_hash.into(),
            app_hash: app_hash.into(),
            func_hash: func_hash.into(),
            trigger,
            day,
            per_minute_counts,
        })
    }

    pub fn counts(&self) -> &[u32] {
        &self.per_minute_counts
    }
}

/// Reads one day of the raw invocation table.
pub fn parse_raw<R: Read>(reader: R, day: u32) -> Result<Vec<RawInvocationRow>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected_prefix = ["HashOwner", "HashApp", "HashFunction", "Trigger"];
    let ok = headers.len() == 4 + MINUTES_PER_DAY
        && headers.iter().take(4).eq(expected_prefix.iter().copied());
    if !ok {
        return Err(TraceError::Header {
            expected: expected_prefix
                .iter()
                .map(|s| s.to_string())
                .chain(std::iter::once("1..1440".to_string()))
                .collect(),
            found: headers.iter().take(6).map(str::to_string).collect(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let malformed = |msg: String| TraceError::Malformed { line, msg };
        if rec.len() != 4 + MINUTES_PER_DAY {
            return Err(malformed(format!("expected {} fields, got {}", 4 + MINUTES_PER_DAY, rec.len())));
        }
        let trigger: Trigger = rec[3].parse().map_err(|e: TraceError| malformed(e.to_string()))?;
        let counts = rec
            .iter()
            .skip(4)
            .map(|v| v.trim().parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| malformed(format!("bad count: {e}")))?;
        rows.push(RawInvocationRow::new(&rec[0], &rec[1], &rec[2], trigger, day, counts)?);
    }
    Ok(rows)
}

/// Keeps only HTTP-triggered rows, preserving order.
pub fn filter_http(rows: Vec<RawInvocationRow>) -> Vec<RawInvocationRow> {
    rows.into_iter().filter(|r| r.trigger == Trigger::Http).collect()
}

/// One provisioned function-instance arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    /// Instance index within its function.
    pub func_index: u32,
    pub owner_hash: String,
    pub app_hash: String,
    /// Dense function id in `0..vocab_size`.
    pub func_id: u32,
    pub avg_exec_ms: f64,
    pub arrival_minute: u64,
    /// 1-based running count of instances of the same function.
    pub instance_count_so_far: u32,
}

/// Canonically ordered arrival records plus the id decoding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalDataset {
    records: Vec<ArrivalRecord>,
    vocab_size: usize,
    timeline_minutes: u64,
    /// `original_ids[dense]` is the label the function carried on input.
    original_ids: Vec<u64>,
}

/// Record as seen on input, before canonicalisation.
#[derive(Debug, Clone)]
pub(crate) struct InputRecord {
    pub func_index: u32,
    pub owner_hash: String,
    pub app_hash: String,
    pub func_label: u64,
    pub avg_exec_ms: f64,
    pub arrival_minute: u64,
}

impl ArrivalDataset {
    pub fn empty() -> Self {
        Self {
            records: Vec::new(),
            vocab_size: 0,
            timeline_minutes: DEFAULT_TIMELINE_MINUTES,
            original_ids: Vec::new(),
        }
    }

    /// Canonicalises raw records: dense id remap (ascending label order),
    /// sort, and instance-count recomputation.
    pub(crate) fn from_input(
        input: Vec<InputRecord>,
        timeline_minutes: u64,
    ) -> Result<Self, TraceError> {
        let mut seen = HashSet::with_capacity(input.len());
        for r in &input {
            if !seen.insert((r.func_label, r.func_index)) {
                return Err(TraceError::DuplicateInstance {
                    func_id: r.func_label,
                    func_index: r.func_index,
                });
            }
        }
        let labels: Vec<u64> = input
            .iter()
            .map(|r| r.func_label)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let dense: HashMap<u64, u32> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i as u32))
            .collect();
        let mut records: Vec<ArrivalRecord> = input
            .into_iter()
            .map(|r| ArrivalRecord {
                func_index: r.func_index,
                owner_hash: r.owner_hash,
                app_hash: r.app_hash,
                func_id: dense[&r.func_label],
                avg_exec_ms: r.avg_exec_ms,
                arrival_minute: r.arrival_minute,
                instance_count_so_far: 0,
            })
            .collect();
        records.sort_by_key(|r| (r.arrival_minute, r.func_id, r.func_index));
        let mut counts = vec![0u32; labels.len()];
        for r in &mut records {
            counts[r.func_id as usize] += 1;
            r.instance_count_so_far = counts[r.func_id as usize];
        }
        let last = records.last().map_or(0, |r| r.arrival_minute + 1);
        Ok(Self {
            records,
            vocab_size: labels.len(),
            timeline_minutes: timeline_minutes.max(last),
            original_ids: labels,
        })
    }

    pub fn records(&self) -> &[ArrivalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn timeline_minutes(&self) -> u64 {
        self.timeline_minutes
    }

    /// Input label of a dense function id.
    pub fn original_id(&self, func_id: u32) -> u64 {
        self.original_ids[func_id as usize]
    }

    pub fn original_ids(&self) -> &[u64] {
        &self.original_ids
    }

    /// Number of records per dense function id.
    pub fn instances_per_function(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.vocab_size];
        for r in &self.records {
            counts[r.func_id as usize] += 1;
        }
        counts
    }

    /// Owner and app indices in first-seen order over the canonical record order.
    pub fn owner_app_indices(&self) -> Vec<(u32, u32)> {
        let mut owners: HashMap<&str, u32> = HashMap::new();
        let mut apps: HashMap<(&str, &str), u32> = HashMap::new();
        self.records
            .iter()
            .map(|r| {
                let next_o = owners.len() as u32;
                let o = *owners.entry(r.owner_hash.as_str()).or_insert(next_o);
                let next_a = apps.len() as u32;
                let a = *apps
                    .entry((r.owner_hash.as_str(), r.app_hash.as_str()))
                    .or_insert(next_a);
                (o, a)
            })
            .collect()
    }

    fn to_input(&self) -> Vec<InputRecord> {
        self.records
            .iter()
            .map(|r| InputRecord {
                func_index: r.func_index,
                owner_hash: r.owner_hash.clone(),
                app_hash: r.app_hash.clone(),
                func_label: self.original_ids[r.func_id as usize],
                avg_exec_ms: r.avg_exec_ms,
                arrival_minute: r.arrival_minute,
            })
            .collect()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct PreparedRow {
    #[serde(rename = "Func_index")]
    func_index: u32,
    #[serde(rename = "HashOwner")]
    owner: String,
    #[serde(rename = "HashApp")]
    app: String,
    #[serde(rename = "Func_ID")]
    func_id: u64,
    #[serde(rename = "Average")]
    average: f64,
    #[serde(rename = "ArrivalMinute")]
    arrival_minute: u64,
}

/// Parses a prepared arrival CSV from a reader.
pub fn read_prepared<R: Read>(reader: R) -> Result<ArrivalDataset, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let found: HashSet<&str> = headers.iter().collect();
    let expected: HashSet<&str> = PREPARED_COLUMNS.iter().copied().collect();
    if found != expected || headers.len() != PREPARED_COLUMNS.len() {
        return Err(TraceError::Header {
            expected: PREPARED_COLUMNS.iter().map(|s| s.to_string()).collect(),
            found: headers.iter().map(str::to_string).collect(),
        });
    }
    let mut input = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: PreparedRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| TraceError::Malformed { line, msg: e.to_string() })?;
        if !row.average.is_finite() || row.average < 0.0 {
            return Err(TraceError::NegativeAverage { line, value: row.average });
        }
        input.push(InputRecord {
            func_index: row.func_index,
            owner_hash: row.owner,
            app_hash: row.app,
            func_label: row.func_id,
            avg_exec_ms: row.average,
            arrival_minute: row.arrival_minute,
        });
    }
    ArrivalDataset::from_input(input, DEFAULT_TIMELINE_MINUTES)
}

/// Parses a prepared arrival CSV file.
pub fn parse_prepared(path: &Path) -> Result<ArrivalDataset, TraceError> {
    read_prepared(std::fs::File::open(path)?)
}

/// Writes the prepared schema; `Func_ID` carries the original label.
pub fn write_prepared<W: Write>(ds: &ArrivalDataset, writer: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &ds.records {
        w.serialize(PreparedRow {
            func_index: r.func_index,
            owner: r.owner_hash.clone(),
            app: r.app_hash.clone(),
            func_id: ds.original_ids[r.func_id as usize],
            average: r.avg_exec_ms,
            arrival_minute: r.arrival_minute,
        })?;
    }
    if ds.records.is_empty() {
        w.write_record(PREPARED_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps functions with strictly more than `k` instances and re-densifies ids.
pub fn filter_min_instances(ds: &ArrivalDataset, k: usize) -> ArrivalDataset {
    let counts = ds.instances_per_function();
    let input: Vec<InputRecord> = ds
        .to_input()
        .into_iter()
        .zip(&ds.records)
        .filter(|(_, r)| counts[r.func_id as usize] > k)
        .map(|(i, _)| i)
        .collect();
    ArrivalDataset::from_input(input, ds.timeline_minutes)
        .expect("subset of a valid dataset stays valid")
}

/// Arrival-gap summary, averaged over functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    /// Mean gap between consecutive instances of a function, in dataset rows.
    pub mean_gap_rows: f64,
    /// Population variance of those row gaps.
    pub gap_variance_rows: f64,
    /// Mean gap in minutes, same averaging.
    pub mean_gap_minutes: f64,
    /// Functions with at least two records.
    pub functions: usize,
}

/// Per-function mean and variance of row-position gaps, averaged across functions.
pub fn gap_stats(ds: &ArrivalDataset) -> Result<GapStats, TraceError> {
    let mut positions: BTreeMap<u32, Vec<(usize, u64)>> = BTreeMap::new();
    for (pos, r) in ds.records.iter().enumerate() {
        positions.entry(r.func_id).or_default().push((pos, r.arrival_minute));
    }
    let (mut mean_sum, mut var_sum, mut minute_sum, mut n) = (0.0, 0.0, 0.0, 0usize);
    for p in positions.values().filter(|p| p.len() >= 2) {
        let gaps: Vec<f64> = p.windows(2).map(|w| (w[1].0 - w[0].0) as f64).collect();
        let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let v = gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / gaps.len() as f64;
        let mm = p.windows(2).map(|w| (w[1].1 - w[0].1) as f64).sum::<f64>() / gaps.len() as f64;
        mean_sum += m;
        var_sum += v;
        minute_sum += mm;
        n += 1;
    }
    if n == 0 {
        return Err(TraceError::UndefinedVariance);
    }
    Ok(GapStats {
        mean_gap_rows: mean_sum / n as f64,
        gap_variance_rows: var_sum / n as f64,
        mean_gap_minutes: minute_sum / n as f64,
        functions: n,
    })
}

/// Mean number of arrivals per minute over the dataset's active span.
pub fn mean_arrival_rate(ds: &ArrivalDataset) -> f64 {
    match (ds.records.first(), ds.records.last()) {
        (Some(a), Some(b)) => ds.len() as f64 / ((b.arrival_minute - a.arrival_minute + 1) as f64),
        _ => 0.0,
    }
}
