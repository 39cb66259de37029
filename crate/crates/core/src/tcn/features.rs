//! Covariates, targets and window assembly.
//!
//! Channel layout of a window:
//!
//! | ch | context position     | horizon position                      |
//! |----|----------------------|---------------------------------------|
//! | 0  | normalised target    | 0                                     |
//! | 1  | 1 (observed)         | 0                                     |
//! | 2-6| record covariates    | known-name covariates (module B only) |
//! | 7  | minute of day        | minute of day at the origin           |
//! | 8  | relative position    | relative position                     |
//!
//! Positions before the first record are all-zero padding.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ForecastTarget, TcnError, TcnHyperParams};
use crate::nn::Grid;
use crate::trace::{ArrivalDataset, MINUTES_PER_DAY};

pub const N_FEATURES: usize = 9;
pub const TARGET: usize = 0;
pub const OBSERVED: usize = 1;
pub const FUNC: usize = 2;
pub const OWNER: usize = 3;
pub const APP: usize = 4;
pub const EXEC: usize = 5;
pub const COUNT: usize = 6;
pub const MINUTE: usize = 7;
pub const POSITION: usize = 8;

/// Per-record covariates in raw units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub func_id: u32,
    pub owner_index: u32,
    pub app_index: u32,
    pub avg_exec_ms: f64,
    pub instance_count_so_far: u32,
    pub minute_of_day: u32,
}

pub fn covariate_rows(ds: &ArrivalDataset) -> Vec<CovariateRow> {
    ds.records()
        .iter()
        .zip(ds.owner_app_indices())
        .map(|(r, (o, a))| CovariateRow {
            func_id: r.func_id,
            owner_index: o,
            app_index: a,
            avg_exec_ms: r.avg_exec_ms,
            instance_count_so_far: r.instance_count_so_far,
            minute_of_day: (r.arrival_minute % MINUTES_PER_DAY as u64) as u32,
        })
        .collect()
}

/// Running count as a share of all records so far. Unlike the raw count it
/// stays in range as the series grows past the training window.
fn count_share(row: &CovariateRow, index: usize) -> f64 {
    row.instance_count_so_far as f64 / (index + 1) as f64
}

/// Module A series: function id of every record.
pub fn module_a_target(ds: &ArrivalDataset) -> Vec<f64> {
    ds.records().iter().map(|r| r.func_id as f64).collect()
}

/// Module B series: `n - 1` inter-arrival gaps in minutes.
pub fn module_b_target(ds: &ArrivalDataset) -> Vec<f64> {
    ds.records()
        .windows(2)
        .map(|w| (w[1].arrival_minute - w[0].arrival_minute) as f64)
        .collect()
}

/// Target aligned to records. For module B entry `k` is the gap into record
/// `k` (zero for the first record).
pub fn per_record_target(ds: &ArrivalDataset, target: ForecastTarget) -> Vec<f64> {
    match target {
        ForecastTarget::FunctionName => module_a_target(ds),
        ForecastTarget::ArrivalTime => {
            let mut v = Vec::with_capacity(ds.len());
            if !ds.is_empty() {
                v.push(0.0);
            }
            v.extend(module_b_target(ds));
            v
        }
    }
}

/// Cumulative sum of gaps starting at `first`; length `gaps.len() + 1`.
pub fn reconstruct_arrivals(first: f64, gaps: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(gaps.len() + 1);
    let mut t = first;
    out.push(t);
    for g in gaps {
        t += g;
        out.push(t);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub mean: f64,
    pub std: f64,
}

impl Affine {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Normalisation fitted on a training range only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub func: Affine,
    pub owner: Affine,
    pub app: Affine,
    /// Over `ln(1 + exec_ms)`.
    pub exec: Affine,
    /// Over the running share `count / (index + 1)`.
    pub count: Affine,
    /// Target encoding `z = (y - mean) / scale`. For module B the mean is 0
    /// and the scale is the mean training gap.
    pub target_mean: f64,
    pub target_scale: f64,
}

impl NormStats {
    pub fn fit(
        rows: &[CovariateRow],
        targets: &[f64],
        target: ForecastTarget,
        range: Range<usize>,
    ) -> Result<Self, TcnError> {
        if range.is_empty() || range.end > rows.len() || range.end > targets.len() {
            return Err(TcnError::Window(format!(
                "normalisation range {range:?} invalid for {} records",
                rows.len()
            )));
        }
        let rs = &rows[range.clone()];
        let (target_mean, target_scale) = match target {
            ForecastTarget::FunctionName => {
                let a = Affine::fit(targets[range.clone()].iter().copied());
                (a.mean, a.std)
            }
            ForecastTarget::ArrivalTime => {
                // first record has no incoming gap
                let lo = range.start.max(1);
                let gaps = &targets[lo.min(range.end)..range.end];
                let mean = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };
                (0.0, if mean > 1e-12 { mean } else { 1.0 })
            }
        };
        Ok(Self {
            func: Affine::fit(rs.iter().map(|r| r.func_id as f64)),
            owner: Affine::fit(rs.iter().map(|r| r.owner_index as f64)),
            app: Affine::fit(rs.iter().map(|r| r.app_index as f64)),
            exec: Affine::fit(rs.iter().map(|r| r.avg_exec_ms.ln_1p())),
            count: Affine::fit(rs.iter().zip(range.clone()).map(|(r, i)| count_share(r, i))),
            target_mean,
            target_scale,
        })
    }

    pub fn encode(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_scale
    }

    /// Inverse of [`NormStats::encode`]; the target kind is accepted for
    /// call-site clarity since both kinds share the affine form.
    pub fn decode(&self, _target: ForecastTarget, z: f64) -> f64 {
        z * self.target_scale + self.target_mean
    }
}

/// Source of function names for horizon positions of module B windows.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum FutureNames {
    /// Use the recorded function of each upcoming record.
    #[default]
    Observed,
    /// Use names forecast by module A; positions past the slice are padding.
    Predicted(Vec<u32>),
}

/// One forecast window: records `[origin - context, origin)` are observed.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpec {
    pub origin: usize,
    pub names: FutureNames,
    /// Records at or past this index are invisible (training windows stop
    /// at the end of their training range).
    pub limit: Option<usize>,
}

impl WindowSpec {
    pub fn at(origin: usize) -> Self {
        Self {
            origin,
            names: FutureNames::Observed,
            limit: None,
        }
    }

    pub fn with_names(origin: usize, names: Vec<u32>) -> Self {
        Self {
            origin,
            names: FutureNames::Predicted(names),
            limit: None,
        }
    }

    pub fn limited(mut self, limit: usize) -> Self {
        self.limit = Some(limit);
        self
    }
}

/// Dataset view that assembles normalised model windows.
#[derive(Debug, Clone)]
pub struct FeatureFrame {
    target: ForecastTarget,
    rows: Vec<CovariateRow>,
    targets: Vec<f64>,
    arrival_minutes: Vec<u64>,
    /// Owner index, app index, exec ms per function id (first occurrence).
    func_meta: Vec<Option<(u32, u32, f64)>>,
    stats: NormStats,
}

impl FeatureFrame {
    /// Builds a frame with normalisation fitted on `train_range`.
    pub fn new(ds: &ArrivalDataset, target: ForecastTarget, train_range: Range<usize>) -> Result<Self, TcnError> {
        if ds.is_empty() {
            return Err(TcnError::EmptyDataset);
        }
        let rows = covariate_rows(ds);
        let targets = per_record_target(ds, target);
        let stats = NormStats::fit(&rows, &targets, target, train_range)?;
        Ok(Self::assemble(ds, target, rows, targets, stats))
    }

    /// Builds a frame around previously fitted statistics.
    pub fn with_stats(ds: &ArrivalDataset, target: ForecastTarget, stats: NormStats) -> Result<Self, TcnError> {
        if ds.is_empty() {
            return Err(TcnError::EmptyDataset);
        }
        let rows = covariate_rows(ds);
        let targets = per_record_target(ds, target);
        Ok(Self::assemble(ds, target, rows, targets, stats))
    }

    fn assemble(
        ds: &ArrivalDataset,
        target: ForecastTarget,
        rows: Vec<CovariateRow>,
        targets: Vec<f64>,
        stats: NormStats,
    ) -> Self {
        let mut func_meta = vec![None; ds.vocab_size()];
        for r in &rows {
            let slot = &mut func_meta[r.func_id as usize];
            if slot.is_none() {
                *slot = Some((r.owner_index, r.app_index, r.avg_exec_ms));
            }
        }
        Self {
            target,
            arrival_minutes: ds.records().iter().map(|r| r.arrival_minute).collect(),
            rows,
            targets,
            func_meta,
            stats,
        }
    }

    pub fn target(&self) -> ForecastTarget {
        self.target
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Raw target of record `r`.
    pub fn target_value(&self, r: usize) -> f64 {
        self.targets[r]
    }

    /// Normalised target of record `r`.
    pub fn encoded_target(&self, r: usize) -> f64 {
        self.stats.encode(self.targets[r])
    }

    /// Arrival minute of the last observed record.
    pub fn origin_minute(&self, origin: usize) -> u64 {
        self.arrival_minutes[origin - 1]
    }

    fn write_covariates(&self, x: &mut Grid, p: usize, row: &CovariateRow, index: usize) {
        let s = &self.stats;
        x.set(FUNC, p, s.func.apply(row.func_id as f64));
        x.set(OWNER, p, s.owner.apply(row.owner_index as f64));
        x.set(APP, p, s.app.apply(row.app_index as f64));
        x.set(EXEC, p, s.exec.apply(row.avg_exec_ms.ln_1p()));
        x.set(COUNT, p, s.count.apply(count_share(row, index)));
    }

    /// Assembles the `(N_FEATURES, context + horizon)` input for `spec`.
    pub fn window(&self, spec: &WindowSpec, hp: &TcnHyperParams) -> Result<Grid, TcnError> {
        let n = self.rows.len();
        let origin = spec.origin;
        if origin == 0 || origin > n {
            return Err(TcnError::Window(format!("origin {origin} outside 1..={n}")));
        }
        if spec.limit.is_some_and(|l| l < origin) {
            return Err(TcnError::Window(format!("limit {:?} precedes origin {origin}", spec.limit)));
        }
        let ctx = hp.context;
        let len = hp.window_len();
        let mut x = Grid::zeros(N_FEATURES, len);
        let pos_scale = (len.max(2) - 1) as f64;
        for p in 0..ctx {
            let Some(r) = (origin + p).checked_sub(ctx) else { continue };
            let row = &self.rows[r];
            x.set(TARGET, p, self.encoded_target(r));
            x.set(OBSERVED, p, 1.0);
            self.write_covariates(&mut x, p, row, r);
            x.set(MINUTE, p, row.minute_of_day as f64 / MINUTES_PER_DAY as f64);
            x.set(POSITION, p, p as f64 / pos_scale);
        }
        let origin_mod = self.rows[origin - 1].minute_of_day as f64 / MINUTES_PER_DAY as f64;
        let mut counts = match (&spec.names, self.target) {
            (FutureNames::Predicted(_), ForecastTarget::ArrivalTime) => {
                let mut c = vec![0u32; self.func_meta.len()];
                for row in &self.rows[..origin] {
                    c[row.func_id as usize] += 1;
                }
                c
            }
            _ => Vec::new(),
        };
        for k in 0..hp.horizon {
            let p = ctx + k;
            x.set(MINUTE, p, origin_mod);
            x.set(POSITION, p, p as f64 / pos_scale);
            if self.target == ForecastTarget::FunctionName || spec.limit.is_some_and(|l| origin + k >= l) {
                continue;
            }
            match &spec.names {
                FutureNames::Observed => {
                    if let Some(row) = self.rows.get(origin + k) {
                        self.write_covariates(&mut x, p, row, origin + k);
                    }
                }
                FutureNames::Predicted(names) => {
                    let Some(&f) = names.get(k) else { continue };
                    let Some(Some((owner_index, app_index, avg_exec_ms))) = self.func_meta.get(f as usize).copied()
                    else {
                        continue;
                    };
                    counts[f as usize] += 1;
                    let row = CovariateRow {
                        func_id: f,
                        owner_index,
                        app_index,
                        avg_exec_ms,
                        instance_count_so_far: counts[f as usize],
                        minute_of_day: 0,
                    };
                    self.write_covariates(&mut x, p, &row, origin + k);
                }
            }
        }
        Ok(x)
    }
}
