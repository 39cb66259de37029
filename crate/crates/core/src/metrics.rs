//! The five evaluation metrics.
//!
//! Variances are population variances (divide by `n`). A metric whose
//! definition breaks down on the given data (constant truth, constant
//! ranks) returns [`MetricError::Undefined`] rather than a made-up number.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominator guard for MAPE.
pub const MAPE_EPS: f64 = 1e-9;

/// Row labels used in benchmark tables, in report order.
pub const METRIC_LABELS: [&str; 5] = [
    "Explained variance",
    "Mean absolute percentage error",
    "Normalized root mean square error",
    "R2 score",
    "Spearman Correlation",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {truth} truth vs {pred} predicted")]
    Length { truth: usize, pred: usize },
    #[error("{metric} needs at least {need} points, got {got}")]
    TooShort { metric: &'static str, need: usize, got: usize },
    #[error("{metric} undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },
}

fn check(metric: &'static str, y: &[f64], yhat: &[f64], need: usize) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::Length {
            truth: y.len(),
            pred: yhat.len(),
        });
    }
    if y.len() < need {
        return Err(MetricError::TooShort {
            metric,
            need,
            got: y.len(),
        });
    }
    Ok(())
}

fn mean(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count();
    v.sum::<f64>() / n as f64
}

fn pop_variance(v: &[f64]) -> f64 {
    let m = mean(v.iter().copied());
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// `1 - Var(y - yhat) / Var(y)`.
pub fn explained_variance(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    const NAME: &str = "explained variance";
    check(NAME, y, yhat, 2)?;
    let vy = pop_variance(y);
    if vy == 0.0 {
        return Err(MetricError::Undefined {
            metric: NAME,
            reason: "truth has zero variance".into(),
        });
    }
    let err: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| a - b).collect();
    Ok(1.0 - pop_variance(&err) / vy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub percent: f64,
    /// Points whose `|y|` fell below [`MAPE_EPS`].
    pub guarded: usize,
}

/// `mean(|y - yhat| / max(|y|, eps)) * 100`.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<Mape, MetricError> {
    check("MAPE", y, yhat, 1)?;
    let mut guarded = 0;
    let total: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| {
            if a.abs() < MAPE_EPS {
                guarded += 1;
            }
            (a - b).abs() / a.abs().max(MAPE_EPS)
        })
        .sum();
    Ok(Mape {
        percent: total / y.len() as f64 * 100.0,
        guarded,
    })
}

/// Unguarded MAPE; zero truths produce `inf` or `NaN` terms.
pub fn mape_raw(y: &[f64], yhat: &[f64]) -> Result<Mape, MetricError> {
    check("MAPE", y, yhat, 1)?;
    let total: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs() / a.abs()).sum();
    Ok(Mape {
        percent: total / y.len() as f64 * 100.0,
        guarded: 0,
    })
}

/// RMSE divided by the range of `y`.
pub fn nrmse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    const NAME: &str = "nRMSE";
    check(NAME, y, yhat, 2)?;
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Err(MetricError::Undefined {
            metric: NAME,
            reason: "truth has zero range".into(),
        });
    }
    let mse = mean(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)));
    Ok(mse.sqrt() / (hi - lo))
}

/// `1 - SS_res / SS_tot`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    const NAME: &str = "R2";
    check(NAME, y, yhat, 2)?;
    let m = mean(y.iter().copied());
    let ss_tot: f64 = y.iter().map(|a| (a - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::Undefined {
            metric: NAME,
            reason: "truth has zero variance".into(),
        });
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let ma = mean(a.iter().copied());
    let mb = mean(b.iter().copied());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    const NAME: &str = "Spearman";
    check(NAME, y, yhat, 2)?;
    pearson(&average_ranks(y), &average_ranks(yhat)).ok_or_else(|| MetricError::Undefined {
        metric: NAME,
        reason: if y.iter().all(|v| *v == y[0]) {
            "truth is constant".into()
        } else {
            "prediction is constant".into()
        },
    })
}

/// All five metrics for one (truth, prediction) pair. Metrics that are
/// undefined on this data are `None` with the reason in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub explained_variance: Option<f64>,
    pub mape_percent: Option<f64>,
    pub mape_guarded: usize,
    pub nrmse: Option<f64>,
    pub r2: Option<f64>,
    pub spearman: Option<f64>,
    pub n_points: usize,
    pub undefined: Vec<String>,
}

impl MetricReport {
    /// `guard = false` reproduces unguarded MAPE.
    pub fn compute(y: &[f64], yhat: &[f64], guard: bool) -> Result<Self, MetricError> {
        check("report", y, yhat, 0)?;
        let mut undefined = Vec::new();
        let mut keep = |r: Result<f64, MetricError>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                undefined.push(e.to_string());
                None
            }
        };
        let explained_variance = keep(explained_variance(y, yhat));
        let nrmse = keep(nrmse(y, yhat));
        let r2 = keep(r2(y, yhat));
        let spearman = keep(spearman(y, yhat));
        let m = if guard { mape(y, yhat) } else { mape_raw(y, yhat) };
        let (mape_percent, mape_guarded) = match m {
            Ok(m) if !m.percent.is_finite() => (
                keep(Err(MetricError::Undefined {
                    metric: "MAPE",
                    reason: "zero truth without the guard".into(),
                })),
                0,
            ),
            Ok(m) => (keep(Ok(m.percent)), m.guarded),
            Err(e) => (keep(Err(e)), 0),
        };
        Ok(Self {
            explained_variance,
            mape_percent,
            mape_guarded,
            nrmse,
            r2,
            spearman,
            n_points: y.len(),
            undefined,
        })
    }

    /// `(label, value)` pairs in [`METRIC_LABELS`] order.
    pub fn rows(&self) -> [(&'static str, Option<f64>); 5] {
        [
            (METRIC_LABELS[0], self.explained_variance),
            (METRIC_LABELS[1], self.mape_percent),
            (METRIC_LABELS[2], self.nrmse),
            (METRIC_LABELS[3], self.r2),
            (METRIC_LABELS[4], self.spearman),
        ]
    }
}
