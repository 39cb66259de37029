//! Forecast windows consumed by the ensemble.

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::tcn::{forecast, FeatureFrame, TcnModel, WindowSpec};
use crate::trace::ArrivalDataset;

/// Predicted upcoming arrivals as `(minute, function)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastWindow {
    pub issued_at: f64,
    pub arrivals: Vec<(f64, u32)>,
}

pub trait ForecastProvider {
    fn name(&self) -> String;
    /// Latest window usable at `now`; `Ok(None)` when nothing fresh exists.
    fn window(&mut self, now: f64) -> Result<Option<ForecastWindow>, PolicyError>;
    fn confidence(&self) -> f64;
}

/// Perfect foresight: the next `horizon` recorded arrivals.
#[derive(Debug, Clone)]
pub struct OracleForecasts {
    arrivals: Vec<(f64, u32)>,
    horizon: usize,
}

impl OracleForecasts {
    pub fn new(mut arrivals: Vec<(f64, u32)>, horizon: usize) -> Self {
        arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self { arrivals, horizon }
    }

    pub fn from_dataset(ds: &ArrivalDataset, horizon: usize) -> Self {
        Self::new(ds.records().iter().map(|r| (r.arrival_minute as f64, r.func_id)).collect(), horizon)
    }
}

impl ForecastProvider for OracleForecasts {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn window(&mut self, now: f64) -> Result<Option<ForecastWindow>, PolicyError> {
        // arrivals at `now` itself are handled after the tick
        let start = self.arrivals.partition_point(|a| a.0 < now);
        let end = (start + self.horizon).min(self.arrivals.len());
        if start == end {
            return Ok(None);
        }
        Ok(Some(ForecastWindow {
            issued_at: now,
            arrivals: self.arrivals[start..end].to_vec(),
        }))
    }

    fn confidence(&self) -> f64 {
        1.0
    }
}

/// Windows computed ahead of time, e.g. from a model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedForecasts {
    pub windows: Vec<ForecastWindow>,
    pub confidence: f64,
}

impl RecordedForecasts {
    pub fn new(mut windows: Vec<ForecastWindow>, confidence: f64) -> Self {
        windows.sort_by(|a, b| a.issued_at.total_cmp(&b.issued_at));
        Self { windows, confidence }
    }
}

impl ForecastProvider for RecordedForecasts {
    fn name(&self) -> String {
        "recorded".into()
    }

    fn window(&mut self, now: f64) -> Result<Option<ForecastWindow>, PolicyError> {
        let i = self.windows.partition_point(|w| w.issued_at <= now);
        if i == 0 {
            return Ok(None);
        }
        let w = &self.windows[i - 1];
        // stale once every predicted arrival is in the past
        if w.arrivals.iter().all(|a| a.0 < now) {
            return Ok(None);
        }
        Ok(Some(w.clone()))
    }

    fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Wraps a provider and fails every call after the first `ok_calls`.
pub struct FaultyForecasts {
    inner: Box<dyn ForecastProvider>,
    ok_calls: usize,
    calls: usize,
}

impl FaultyForecasts {
    pub fn new(inner: Box<dyn ForecastProvider>, ok_calls: usize) -> Self {
        Self { inner, ok_calls, calls: 0 }
    }
}

impl ForecastProvider for FaultyForecasts {
    fn name(&self) -> String {
        format!("faulty-{}", self.inner.name())
    }

    fn window(&mut self, now: f64) -> Result<Option<ForecastWindow>, PolicyError> {
        self.calls += 1;
        if self.calls > self.ok_calls {
            return Err(PolicyError::Forecast(format!("injected failure on call {}", self.calls)));
        }
        self.inner.window(now)
    }

    fn confidence(&self) -> f64 {
        self.inner.confidence()
    }
}

/// Live forecasts from a module A / module B pair. Module B reads the names
/// module A predicts; the window is recomputed whenever a new arrival has
/// been observed.
pub struct ModelForecasts {
    model_a: TcnModel,
    model_b: TcnModel,
    frame_a: FeatureFrame,
    frame_b: FeatureFrame,
    minutes: Vec<u64>,
    vocab_size: usize,
    confidence: f64,
    cache: Option<(usize, ForecastWindow)>,
}

impl ModelForecasts {
    pub fn new(
        ds: &ArrivalDataset,
        model_a: TcnModel,
        frame_a: FeatureFrame,
        model_b: TcnModel,
        frame_b: FeatureFrame,
        confidence: f64,
    ) -> Self {
        Self {
            model_a,
            model_b,
            frame_a,
            frame_b,
            minutes: ds.records().iter().map(|r| r.arrival_minute).collect(),
            vocab_size: ds.vocab_size(),
            confidence,
            cache: None,
        }
    }

    /// Forecast conditioned on the first `origin` records.
    pub fn window_at(&self, origin: usize) -> Result<ForecastWindow, PolicyError> {
        let err = |e: crate::tcn::TcnError| PolicyError::Forecast(e.to_string());
        let a = forecast(&self.model_a, &self.frame_a, &WindowSpec::at(origin)).map_err(err)?;
        let names = a.function_ids(self.vocab_size);
        let b = forecast(&self.model_b, &self.frame_b, &WindowSpec::with_names(origin, names.clone())).map_err(err)?;
        Ok(ForecastWindow {
            issued_at: self.minutes[origin - 1] as f64,
            arrivals: b.arrival_minutes().into_iter().zip(names).collect(),
        })
    }
}

impl ForecastProvider for ModelForecasts {
    fn name(&self) -> String {
        "model".into()
    }

    fn window(&mut self, now: f64) -> Result<Option<ForecastWindow>, PolicyError> {
        // arrivals at `now` itself are handled after the tick
        let origin = self.minutes.partition_point(|&m| (m as f64) < now);
        if origin == 0 {
            return Ok(None);
        }
        if let Some((o, w)) = &self.cache {
            if *o == origin {
                return Ok(Some(w.clone()));
            }
        }
        let w = self.window_at(origin)?;
        self.cache = Some((origin, w.clone()));
        Ok(Some(w))
    }

    fn confidence(&self) -> f64 {
        self.confidence
    }
}
