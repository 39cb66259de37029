//! Paired evaluation of the TCN modules against classical baselines on
//! identical rolling CV steps.
//!
//! Every method sees the same training prefix and predicts the same
//! validation records; metrics are pooled over all validation steps. Module B
//! is evaluated twice: with the recorded names of upcoming records and with
//! the names module A forecast at the same step.

use serde::{Deserialize, Serialize};

use crate::baselines::{arx_forecast, arx_select, es_forecast, es_select_alpha, naive_forecast, BaselineError};
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::tcn::{build_model, per_record_target, ForecastTarget, TcnHyperParams};
use crate::trace::ArrivalDataset;
use crate::training::{fit, make_cv_steps, resume_named, CvStep, FitState, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub hp: TcnHyperParams,
    pub train: TrainConfig,
    /// Guard MAPE against zero targets.
    #[serde(default = "yes")]
    pub mape_guard: bool,
    /// Tail of each training series used to pick ARIMA orders.
    #[serde(default = "default_holdout")]
    pub arima_holdout: usize,
}

fn yes() -> bool {
    true
}
fn default_holdout() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    /// Recorded names of the upcoming records.
    Observed,
    /// Names forecast by module A.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ran,
    NotRun { reason: String },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub target: ForecastTarget,
    pub wiring: Option<Wiring>,
    #[serde(flatten)]
    pub status: RunStatus,
    /// Pooled over validation steps.
    pub report: Option<MetricReport>,
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub steps: Vec<CvStep>,
    /// Pooled validation truth per target: module A, module B.
    pub truth_a: Vec<f64>,
    pub truth_b: Vec<f64>,
    pub results: Vec<MethodResult>,
    pub fit_a: FitState,
    pub fit_b: FitState,
}

impl BenchmarkReport {
    pub fn find(&self, method: &str, target: ForecastTarget, wiring: Option<Wiring>) -> Option<&MethodResult> {
        self.results
            .iter()
            .find(|r| r.method == method && r.target == target && r.wiring == wiring)
    }
}

pub const TCN: &str = "TCN";
pub const EXP_SMOOTHING: &str = "Exponential smoothing";
pub const ARIMA: &str = "ARIMA";
pub const ARIMAX: &str = "ARIMAX";
pub const NAIVE: &str = "Naive";
pub const PROPHET: &str = "Prophet";

/// History visible at a step. Module B drops index 0, which has no gap.
fn history(series: &[f64], step: &CvStep, target: ForecastTarget) -> Vec<f64> {
    let start = match target {
        ForecastTarget::ArrivalTime => step.train_range.start.max(1),
        ForecastTarget::FunctionName => step.train_range.start,
    };
    series[start..step.train_range.end].to_vec()
}

fn finish(method: &str, target: ForecastTarget, wiring: Option<Wiring>, truth: &[f64], pred: Result<Vec<f64>, String>, guard: bool) -> MethodResult {
    match pred {
        Ok(p) => {
            let report = MetricReport::compute(truth, &p, guard);
            let status = match &report {
                Ok(_) => RunStatus::Ran,
                Err(e) => RunStatus::Failed { reason: e.to_string() },
            };
            MethodResult {
                method: method.into(),
                target,
                wiring,
                status,
                report: report.ok(),
                predictions: p,
            }
        }
        Err(reason) => MethodResult {
            method: method.into(),
            target,
            wiring,
            status: RunStatus::Failed { reason },
            report: None,
            predictions: Vec::new(),
        },
    }
}

type Forecaster<'a> = dyn Fn(&[f64], &CvStep) -> std::result::Result<Vec<f64>, BaselineError> + 'a;

fn pooled_baseline(series: &[f64], steps: &[CvStep], target: ForecastTarget, f: &Forecaster) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for s in steps.iter().filter(|s| !s.predict_range.is_empty()) {
        let hist = history(series, s, target);
        out.extend(f(&hist, s).map_err(|e| format!("step {}: {e}", s.step_index))?);
    }
    Ok(out)
}

/// Mean training gap per function, with the global mean for unseen ones.
fn gap_encoding(ds: &ArrivalDataset, gaps: &[f64], end: usize) -> Vec<f64> {
    let v = ds.vocab_size();
    let (mut sum, mut n) = (vec![0.0; v], vec![0usize; v]);
    let recs = ds.records();
    for i in 1..end {
        sum[recs[i].func_id as usize] += gaps[i];
        n[recs[i].func_id as usize] += 1;
    }
    let total: f64 = sum.iter().sum();
    let count: usize = n.iter().sum();
    let global = if count == 0 { 0.0 } else { total / count as f64 };
    sum.iter().zip(&n).map(|(s, &k)| if k == 0 { global } else { s / k as f64 }).collect()
}

fn pooled_truth(series: &[f64], steps: &[CvStep]) -> Vec<f64> {
    steps.iter().flat_map(|s| series[s.predict_range.clone()].iter().copied()).collect()
}

/// Module A forecasts as names per step, indexed like `steps`.
fn predicted_names(fit_a: &FitState, n_steps: usize, vocab_size: usize) -> Vec<Vec<u32>> {
    let max_id = vocab_size.saturating_sub(1) as f64;
    let mut names: Vec<Vec<u32>> = vec![Vec::new(); n_steps];
    for rec in &fit_a.steps {
        names[rec.step_index - 1] = rec.predictions.iter().map(|v| v.round().clamp(0.0, max_id) as u32).collect();
    }
    names
}

/// Trains module A, then module B validated under both name wirings.
pub fn train_pair(ds: &ArrivalDataset, hp: &TcnHyperParams, train: &TrainConfig, seed: u64) -> Result<(FitState, FitState)> {
    hp.validate()?;
    let steps = make_cv_steps(ds.len(), hp.horizon)?;
    let model_a = build_model(hp, ForecastTarget::FunctionName, ds.vocab_size(), seed)?;
    let fit_a = fit(model_a, ds, &steps, train, seed)?;
    let names = predicted_names(&fit_a, steps.len(), ds.vocab_size());
    let model_b = build_model(hp, ForecastTarget::ArrivalTime, ds.vocab_size(), seed)?;
    let fit_b = resume_named(FitState::new(model_b), ds, &steps, train, seed, None, Some(&names))?;
    Ok((fit_a, fit_b))
}

/// Runs every method on the rolling steps of horizon `cfg.hp.horizon`.
pub fn run_benchmark(ds: &ArrivalDataset, cfg: &BenchmarkConfig, seed: u64) -> Result<BenchmarkReport> {
    let (fit_a, fit_b) = train_pair(ds, &cfg.hp, &cfg.train, seed)?;
    run_benchmark_with_fits(ds, cfg, fit_a, fit_b)
}

/// As [`run_benchmark`] with TCN fits produced earlier by [`train_pair`].
pub fn run_benchmark_with_fits(ds: &ArrivalDataset, cfg: &BenchmarkConfig, fit_a: FitState, fit_b: FitState) -> Result<BenchmarkReport> {
    cfg.hp.validate()?;
    let h = cfg.hp.horizon;
    let steps = make_cv_steps(ds.len(), h)?;
    for f in [&fit_a, &fit_b] {
        let consistent = f.model.hp == cfg.hp
            && f.steps.iter().all(|r| {
                steps
                    .get(r.step_index.wrapping_sub(1))
                    .is_some_and(|s| s.train_range == r.train_range && s.predict_range == r.predict_range)
            });
        if !consistent {
            return Err(TrainError::Config("fits were trained on other steps or hyper-parameters".into()).into());
        }
    }
    let guard = cfg.mape_guard;
    let ya = per_record_target(ds, ForecastTarget::FunctionName);
    let yb = per_record_target(ds, ForecastTarget::ArrivalTime);
    let truth_a = pooled_truth(&ya, &steps);
    let truth_b = pooled_truth(&yb, &steps);
    let names = predicted_names(&fit_a, steps.len(), ds.vocab_size());

    let mut results = Vec::new();
    let tcn_pred = |st: &FitState, named: bool| -> Result<Vec<f64>, String> {
        let done: Vec<_> = st.steps.iter().filter(|s| !s.predict_range.is_empty()).collect();
        let expected = steps.iter().filter(|s| !s.predict_range.is_empty()).count();
        if done.len() < expected {
            return Err(format!("training budget exhausted after {} of {expected} validation steps", done.len()));
        }
        Ok(done
            .iter()
            .flat_map(|s| if named { s.named_predictions.clone() } else { s.predictions.clone() })
            .collect())
    };
    results.push(finish(TCN, ForecastTarget::FunctionName, None, &truth_a, tcn_pred(&fit_a, false), guard));
    results.push(finish(TCN, ForecastTarget::ArrivalTime, Some(Wiring::Observed), &truth_b, tcn_pred(&fit_b, false), guard));
    results.push(finish(TCN, ForecastTarget::ArrivalTime, Some(Wiring::Predicted), &truth_b, tcn_pred(&fit_b, true), guard));

    let holdout = cfg.arima_holdout;
    for (target, series, truth) in [
        (ForecastTarget::FunctionName, &ya, &truth_a),
        (ForecastTarget::ArrivalTime, &yb, &truth_b),
    ] {
        let es = |hist: &[f64], s: &CvStep| es_forecast(hist, es_select_alpha(hist)?, s.predict_range.len());
        results.push(finish(EXP_SMOOTHING, target, None, truth, pooled_baseline(series, &steps, target, &es), guard));
        let arima = |hist: &[f64], s: &CvStep| {
            let sel = arx_select(hist, &[], holdout)?;
            arx_forecast(&sel.params, hist, &[], s.predict_range.len())
        };
        results.push(finish(ARIMA, target, None, truth, pooled_baseline(series, &steps, target, &arima), guard));
        let naive = |hist: &[f64], s: &CvStep| naive_forecast(hist, s.predict_range.len());
        results.push(finish(NAIVE, target, None, truth, pooled_baseline(series, &steps, target, &naive), guard));
    }

    // ARIMAX on gaps, exogenous input = target-encoded function of each record
    let recs = ds.records();
    for wiring in [Wiring::Observed, Wiring::Predicted] {
        let arimax = |hist: &[f64], s: &CvStep| {
            let enc = gap_encoding(ds, &yb, s.train_range.end);
            let start = s.train_range.start.max(1);
            let past: Vec<Vec<f64>> = (start..s.train_range.end).map(|i| vec![enc[recs[i].func_id as usize]]).collect();
            let future: Vec<Vec<f64>> = match wiring {
                Wiring::Observed => s.predict_range.clone().map(|i| vec![enc[recs[i].func_id as usize]]).collect(),
                Wiring::Predicted => names[s.step_index - 1].iter().map(|&f| vec![enc[f as usize]]).collect(),
            };
            let sel = arx_select(hist, &past, holdout)?;
            arx_forecast(&sel.params, hist, &future, s.predict_range.len())
        };
        results.push(finish(
            ARIMAX,
            ForecastTarget::ArrivalTime,
            Some(wiring),
            &truth_b,
            pooled_baseline(&yb, &steps, ForecastTarget::ArrivalTime, &arimax),
            guard,
        ));
    }

    for target in [ForecastTarget::FunctionName, ForecastTarget::ArrivalTime] {
        results.push(MethodResult {
            method: PROPHET.into(),
            target,
            wiring: None,
            status: RunStatus::NotRun {
                reason: "no native implementation available".into(),
            },
            report: None,
            predictions: Vec::new(),
        });
    }

    Ok(BenchmarkReport {
        steps,
        truth_a,
        truth_b,
        results,
        fit_a,
        fit_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{synth_trace, GapLaw, SynthConfig};
    use crate::training::TrainBudget;

    #[test]
    fn tiny_benchmark_has_every_row() {
        let ds = synth_trace(&SynthConfig::new(3, 40, GapLaw::Poisson { mean_gap: 3.0 }), 1).unwrap();
        let cfg = BenchmarkConfig {
            hp: TcnHyperParams::new(1, 3, 16, 30),
            train: TrainConfig {
                budget: TrainBudget {
                    wall_clock_secs: 600.0,
                    max_epochs: 2,
                    patience: 5,
                },
                windows_per_epoch: 4,
                ..TrainConfig::default()
            },
            mape_guard: true,
            arima_holdout: 10,
        };
        let r = run_benchmark(&ds, &cfg, 3).unwrap();
        assert_eq!(r.results.len(), 3 + 6 + 2 + 2);
        assert_eq!(r.truth_b.len(), ds.len() - 30);
        for m in &r.results {
            if m.status == RunStatus::Ran {
                assert_eq!(m.predictions.len(), if m.target == ForecastTarget::FunctionName { r.truth_a.len() } else { r.truth_b.len() });
            }
        }
        assert!(r.find(PROPHET, ForecastTarget::ArrivalTime, None).is_some());
        let again = run_benchmark(&ds, &cfg, 3).unwrap();
        assert_eq!(r.results, again.results);
    }
}
