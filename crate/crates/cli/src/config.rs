//! Run configuration: profile presets, user overrides, validation.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use coldlab_core::policy::EnsembleConfig;
use coldlab_core::simulator::SimConfig;
use coldlab_core::tcn::TcnHyperParams;
use coldlab_core::trace::{GapLaw, Layout, SynthConfig};
use coldlab_core::training::{SearchSpace, TrainBudget, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fail::{Failure, Kind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Tiny,
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Generated in memory from the run seed.
    Synth { synth: SynthConfig },
    /// A prepared instance CSV.
    Prepared { path: PathBuf },
    /// A directory holding the public trace's per-day invocation tables and,
    /// optionally, its duration tables.
    Raw {
        dir: PathBuf,
        /// Day numbers to read; empty means every day found.
        #[serde(default)]
        days: Vec<u32>,
        #[serde(default = "default_raw_keepalive")]
        keepalive_minutes: u64,
        #[serde(default = "default_min_instances")]
        min_instances: usize,
        #[serde(default = "yes")]
        durations: bool,
    },
}

fn default_raw_keepalive() -> u64 {
    10
}
fn default_min_instances() -> usize {
    9
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastSource {
    /// The trained module pair from the train stage.
    Model,
    /// Recorded future arrivals; an upper bound on forecast quality.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub keepalive_sweep: Vec<f64>,
    pub ensemble: EnsembleConfig,
    pub forecasts: ForecastSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub mape_guard: bool,
    pub arima_holdout: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    Train,
    Evaluate,
    Simulate,
    Report,
}

pub const ALL_STAGES: [Stage; 5] = [Stage::Data, Stage::Train, Stage::Evaluate, Stage::Simulate, Stage::Report];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub data: DataConfig,
    pub model: TcnHyperParams,
    /// When set, train picks hyper-parameters by landmark search instead
    /// of using `model`.
    pub search: Option<SearchSpace>,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub policy: PolicyConfig,
    pub metrics: MetricsConfig,
    /// Stages executed by `run`, in pipeline order.
    pub stages: Vec<Stage>,
}

fn bursty() -> GapLaw {
    GapLaw::Bursty {
        burst_prob: 0.3,
        burst_max_gap: 1,
        calm_mean_gap: 2.0,
    }
}

fn synth(functions: usize, per_function: usize) -> SynthConfig {
    let mut s = SynthConfig::new(functions, per_function, bursty());
    s.layout = Layout::Interleaved;
    s.offset_step = 1.0;
    s
}

fn train(max_epochs: usize, windows: usize, wall_clock_secs: f64) -> TrainConfig {
    TrainConfig {
        budget: TrainBudget {
            wall_clock_secs,
            max_epochs,
            patience: 5,
        },
        windows_per_epoch: windows,
        ..TrainConfig::default()
    }
}

impl RunConfig {
    pub fn preset(profile: Profile) -> Self {
        let policy = PolicyConfig {
            keepalive_sweep: vec![1.0, 5.0, 10.0, 20.0, 60.0],
            ensemble: EnsembleConfig::default(),
            forecasts: ForecastSource::Model,
        };
        let metrics = MetricsConfig {
            mape_guard: true,
            arima_holdout: 50,
        };
        let base = Self {
            profile,
            seed: 7,
            data: DataConfig::Synth { synth: synth(10, 40) },
            model: TcnHyperParams::new(1, 3, 16, 50),
            search: None,
            train: train(3, 16, 600.0),
            sim: SimConfig::default(),
            policy,
            metrics,
            stages: ALL_STAGES.to_vec(),
        };
        match profile {
            Profile::Tiny => Self {
                metrics: MetricsConfig {
                    arima_holdout: 20,
                    ..base.metrics
                },
                ..base
            },
            Profile::Desk => {
                let mut model = TcnHyperParams::new(1, 3, 32, 200);
                model.context = 64;
                Self {
                    data: DataConfig::Synth { synth: synth(20, 250) },
                    model,
                    train: train(8, 32, 900.0),
                    ..base
                }
            }
            Profile::Full => Self {
                data: DataConfig::Prepared {
                    path: PathBuf::from("prepared.csv"),
                },
                model: TcnHyperParams::new(1, 3, 64, 500),
                search: Some(SearchSpace::new([64, 256], 500)),
                train: train(20, 64, 8.0 * 3600.0),
                ..base
            },
        }
    }

    /// Preset for `profile` with the JSON object `overrides` merged on top.
    pub fn resolve(profile: Profile, overrides: Option<Value>) -> Result<Self, Failure> {
        let mut v = serde_json::to_value(Self::preset(profile)).map_err(Failure::internal)?;
        if let Some(o) = overrides {
            if !o.is_object() {
                return Err(Failure::msg(Kind::Config, "config must be a JSON object"));
            }
            merge(&mut v, o);
        }
        let cfg: Self =
            serde_json::from_value(v).map_err(|e| Failure::msg(Kind::Config, format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self, Failure> {
        let overrides = match path {
            None => None,
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::msg(Kind::Config, format!("reading {}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| Failure::msg(Kind::Config, format!("parsing {}: {e}", p.display())))?;
                Some(v)
            }
        };
        Self::resolve(profile, overrides)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let cfg = |e: String| Failure::msg(Kind::Config, e);
        self.model.validate().map_err(|e| cfg(format!("model: {e}")))?;
        if let Some(s) = &self.search {
            s.validate().map_err(|e| cfg(e.to_string()))?;
        }
        self.train.validate().map_err(|e| cfg(format!("train: {e}")))?;
        self.sim.validate().map_err(|e| cfg(format!("sim: {e}")))?;
        if let DataConfig::Synth { synth } = &self.data {
            synth.validate().map_err(|e| cfg(format!("data: {e}")))?;
        }
        if self.policy.keepalive_sweep.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(cfg("policy.keepalive_sweep entries must be finite and >= 0".into()));
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(cfg("stages must be distinct and in pipeline order".into()));
        }
        Ok(())
    }

    /// Horizon used by the trained models and the oracle forecasts.
    pub fn horizon(&self) -> usize {
        self.search.map_or(self.model.horizon, |s| s.horizon)
    }
}

/// Objects merge key by key; anything else is replaced. A data object that
/// names its `source` replaces the preset's data wholesale.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let replace = v.get("source").is_some() || !b.contains_key(&k);
                match b.get_mut(&k) {
                    Some(slot) if !replace => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
