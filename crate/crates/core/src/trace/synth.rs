//! Deterministic synthetic arrival traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{ArrivalDataset, InputRecord, TraceError, DEFAULT_TIMELINE_MINUTES};

/// Inter-arrival law, in whole minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GapLaw {
    Constant { gap: u64 },
    Poisson { mean_gap: f64 },
    /// With probability `burst_prob` the gap is uniform on `0..=burst_max_gap`;
    /// otherwise it is Poisson with mean `calm_mean_gap`.
    Bursty {
        burst_prob: f64,
        burst_max_gap: u64,
        calm_mean_gap: f64,
    },
}

/// How per-function arrivals are laid out on the timeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    /// Each function runs its own renewal process starting at
    /// `f * start_stagger`; the streams are merged.
    #[default]
    Independent,
    /// A single global stream. Each step either continues a burst of the
    /// previous function (bursty law, burst branch) or switches to a uniformly
    /// drawn function whose gap carries that function's offset.
    Interleaved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub functions: usize,
    /// In the interleaved layout the stream length is `functions * arrivals_per_function`.
    pub arrivals_per_function: usize,
    pub law: GapLaw,
    #[serde(default)]
    pub layout: Layout,
    /// Function `f` adds `round(offset_step * f)` minutes to every non-burst gap.
    #[serde(default)]
    pub offset_step: f64,
    /// First arrival of function `f` in the independent layout.
    #[serde(default)]
    pub start_stagger: u64,
    /// Per-function average execution time is drawn uniformly from this range.
    #[serde(default = "default_exec_ms")]
    pub exec_ms: [f64; 2],
    #[serde(default = "default_owners")]
    pub owners: usize,
    #[serde(default = "default_apps")]
    pub apps_per_owner: usize,
    #[serde(default = "default_timeline")]
    pub timeline_minutes: u64,
}

fn default_exec_ms() -> [f64; 2] {
    [100.0, 2000.0]
}
fn default_owners() -> usize {
    4
}
fn default_apps() -> usize {
    2
}
fn default_timeline() -> u64 {
    DEFAULT_TIMELINE_MINUTES
}

impl SynthConfig {
    /// Single-law config with defaults for everything else.
    pub fn new(functions: usize, arrivals_per_function: usize, law: GapLaw) -> Self {
        Self {
            functions,
            arrivals_per_function,
            law,
            layout: Layout::Independent,
            offset_step: 0.0,
            start_stagger: 0,
            exec_ms: default_exec_ms(),
            owners: default_owners(),
            apps_per_owner: default_apps(),
            timeline_minutes: default_timeline(),
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::InvalidConfig(m.to_string()));
        if self.functions == 0 {
            return bad("functions must be >= 1");
        }
        if self.arrivals_per_function == 0 {
            return bad("arrivals_per_function must be >= 1");
        }
        if self.owners == 0 || self.apps_per_owner == 0 {
            return bad("owners and apps_per_owner must be >= 1");
        }
        if !(self.offset_step.is_finite() && self.offset_step >= 0.0) {
            return bad("offset_step must be finite and >= 0");
        }
        let [lo, hi] = self.exec_ms;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return bad("exec_ms must be a positive range [lo, hi]");
        }
        match self.law {
            GapLaw::Constant { .. } => {}
            GapLaw::Poisson { mean_gap } => {
                if !(mean_gap.is_finite() && mean_gap > 0.0) {
                    return bad("poisson mean_gap must be > 0");
                }
            }
            GapLaw::Bursty {
                burst_prob,
                calm_mean_gap,
                ..
            } => {
                if !(0.0..=1.0).contains(&burst_prob) {
                    return bad("burst_prob must lie in [0, 1]");
                }
                if !(calm_mean_gap.is_finite() && calm_mean_gap > 0.0) {
                    return bad("calm_mean_gap must be > 0");
                }
            }
        }
        Ok(())
    }
}

enum Draw {
    Burst(u64),
    Regular(u64),
}

fn draw(law: &GapLaw, rng: &mut ChaCha8Rng) -> Draw {
    match *law {
        GapLaw::Constant { gap } => Draw::Regular(gap),
        GapLaw::Poisson { mean_gap } => Draw::Regular(poisson(mean_gap, rng)),
        GapLaw::Bursty {
            burst_prob,
            burst_max_gap,
            calm_mean_gap,
        } => {
            if rng.random::<f64>() < burst_prob {
                Draw::Burst(rng.random_range(0..=burst_max_gap))
            } else {
                Draw::Regular(poisson(calm_mean_gap, rng))
            }
        }
    }
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    Poisson::new(mean).expect("validated mean").sample(rng) as u64
}

/// Generates a deterministic trace for `(cfg, seed)`.
pub fn synth_trace(cfg: &SynthConfig, seed: u64) -> Result<ArrivalDataset, TraceError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.exec_ms;
    let exec: Vec<f64> = (0..cfg.functions)
        .map(|_| if lo == hi { lo } else { rng.random_range(lo..hi) })
        .collect();
    let offset = |f: usize| (cfg.offset_step * f as f64).round() as u64;
    let record = |f: usize, idx: u32, minute: u64| {
        let owner = f % cfg.owners;
        let app = (f / cfg.owners) % cfg.apps_per_owner;
        InputRecord {
            func_index: idx,
            owner_hash: format!("owner{owner:04}"),
            app_hash: format!("app{owner:04}-{app:02}"),
            func_label: f as u64,
            avg_exec_ms: exec[f],
            arrival_minute: minute,
        }
    };

    let mut input = Vec::with_capacity(cfg.functions * cfg.arrivals_per_function);
    match cfg.layout {
        Layout::Independent => {
            for f in 0..cfg.functions {
                let mut t = f as u64 * cfg.start_stagger;
                for i in 0..cfg.arrivals_per_function {
                    if i > 0 {
                        t += match draw(&cfg.law, &mut rng) {
                            Draw::Burst(g) => g,
                            Draw::Regular(g) => g + offset(f),
                        };
                    }
                    input.push(record(f, i as u32, t));
                }
            }
        }
        Layout::Interleaved => {
            let total = cfg.functions * cfg.arrivals_per_function;
            let mut next_index = vec![0u32; cfg.functions];
            let mut t = 0u64;
            let mut prev: Option<usize> = None;
            for _ in 0..total {
                let f = match (draw(&cfg.law, &mut rng), prev) {
                    (Draw::Burst(g), Some(p)) => {
                        t += g;
                        p
                    }
                    (d, _) => {
                        let f = rng.random_range(0..cfg.functions);
                        if prev.is_some() {
                            t += match d {
                                Draw::Burst(g) | Draw::Regular(g) => g,
                            } + offset(f);
                        }
                        f
                    }
                };
                input.push(record(f, next_index[f], t));
                next_index[f] += 1;
                prev = Some(f);
            }
        }
    }
    ArrivalDataset::from_input(input, cfg.timeline_minutes)
}
