//! Rolling-window cross-validation and the training loop.
//!
//! Step 1 only observes the first `h` records. Step `s >= 2` trains on every
//! record before `(s - 1) h` and is validated on the next `h` records. The
//! model carries over between steps (incremental fine-tuning) unless
//! `TrainConfig::incremental` is off, in which case every step starts from
//! the seed initialisation.
//!
//! All randomness is drawn from a generator derived from `(seed, step,
//! epoch)`, so a run stopped after any step and resumed from its
//! [`FitState`] finishes with the same numbers as an uninterrupted run.

mod search;

use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricReport};
use crate::nn::{adam_step, AdamConfig, AdamState, NnError, Params};
use crate::tcn::{build_model, FeatureFrame, TcnError, TcnModel, WindowSpec};
use crate::trace::ArrivalDataset;

pub use search::{
    estimate_memory_bytes, landmark_search, landmarks, refinements, Candidate, CandidateStatus, LeaderboardEntry,
    Phase, SearchOutcome, SearchSpace,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{n} records cannot form rolling steps of horizon {h} (need at least {need})", need = 2 * h)]
    TooSmall { n: usize, h: usize },
    #[error("non-finite training loss at step {step}, epoch {epoch}")]
    NonFiniteLoss { step: usize, epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("all {} candidates failed: {}", .0.len(), .0.join("; "))]
    AllFailed(Vec<String>),
    #[error(transparent)]
    Tcn(#[from] TcnError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// One rolling-origin split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvStep {
    /// 1-based.
    pub step_index: usize,
    pub train_range: Range<usize>,
    /// Empty for the observe-only first step.
    pub predict_range: Range<usize>,
}

/// Tiles `0..n_records` into rolling steps of horizon `h`.
pub fn make_cv_steps(n_records: usize, h: usize) -> Result<Vec<CvStep>, TrainError> {
    if h == 0 || n_records < 2 * h {
        return Err(TrainError::TooSmall { n: n_records, h });
    }
    let mut steps = vec![CvStep {
        step_index: 1,
        train_range: 0..h,
        predict_range: h..h,
    }];
    let mut start = h;
    while start < n_records {
        steps.push(CvStep {
            step_index: steps.len() + 1,
            train_range: 0..start,
            predict_range: start..(start + h).min(n_records),
        });
        start += h;
    }
    Ok(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBudget {
    /// Wall-clock cap for the whole fit; a safety net, not a schedule.
    pub wall_clock_secs: f64,
    /// Epoch cap per CV step.
    pub max_epochs: usize,
    /// Epochs without improvement before a step stops early.
    pub patience: usize,
}

impl Default for TrainBudget {
    fn default() -> Self {
        Self {
            wall_clock_secs: 1800.0,
            max_epochs: 20,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub budget: TrainBudget,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_windows")]
    pub windows_per_epoch: usize,
    #[serde(default = "default_true")]
    pub incremental: bool,
    /// Relative loss decrease that counts as an improvement.
    #[serde(default = "default_min_improvement")]
    pub min_improvement: f64,
}

fn default_lr() -> f64 {
    3e-3
}
fn default_batch() -> usize {
    8
}
fn default_windows() -> usize {
    32
}
fn default_true() -> bool {
    true
}
fn default_min_improvement() -> f64 {
    1e-3
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            budget: TrainBudget::default(),
            lr: default_lr(),
            batch_size: default_batch(),
            windows_per_epoch: default_windows(),
            incremental: true,
            min_improvement: default_min_improvement(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.windows_per_epoch == 0 {
            return bad("batch_size and windows_per_epoch must be >= 1");
        }
        if self.budget.wall_clock_secs.is_nan() || self.budget.wall_clock_secs < 0.0 {
            return bad("wall_clock_secs must be >= 0");
        }
        if self.budget.patience == 0 {
            return bad("patience must be >= 1");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Outcome of one CV step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub train_range: Range<usize>,
    pub predict_range: Range<usize>,
    pub epochs_run: usize,
    /// Mean window loss per epoch, measured before that epoch's updates.
    pub loss_trace: Vec<f64>,
    pub predictions: Vec<f64>,
    /// Module B only: predictions with horizon names taken from a module A
    /// forecast instead of the recorded names. Empty when not requested.
    #[serde(default)]
    pub named_predictions: Vec<f64>,
    pub truth: Vec<f64>,
    pub metrics: Option<MetricReport>,
}

/// Pooled validation score used for ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub nrmse: f64,
    pub spearman: Option<f64>,
    pub n_points: usize,
}

/// Everything needed to continue a fit: weights, optimizer moments, and
/// completed step records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    pub model: TcnModel,
    pub adam: AdamState,
    pub next_step: usize,
    pub steps: Vec<StepRecord>,
    pub budget_exhausted: bool,
    pub elapsed_secs: f64,
}

impl FitState {
    pub fn new(model: TcnModel) -> Self {
        Self {
            model,
            adam: AdamState::default(),
            next_step: 0,
            steps: Vec::new(),
            budget_exhausted: false,
            elapsed_secs: 0.0,
        }
    }

    /// Validation predictions and truth pooled over all completed steps.
    pub fn pooled(&self) -> (Vec<f64>, Vec<f64>) {
        let mut y = Vec::new();
        let mut p = Vec::new();
        for s in &self.steps {
            y.extend(&s.truth);
            p.extend(&s.predictions);
        }
        (y, p)
    }

    pub fn validation_score(&self) -> Option<ValidationScore> {
        let (y, p) = self.pooled();
        let nrmse = metrics::nrmse(&y, &p).ok()?;
        Some(ValidationScore {
            nrmse,
            spearman: metrics::spearman(&y, &p).ok(),
            n_points: y.len(),
        })
    }
}

/// Generator for one `(seed, step, epoch)` cell.
pub fn derive_rng(seed: u64, step: usize, epoch: usize) -> ChaCha8Rng {
    let mut z = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [step as u64, epoch as u64] {
        z = z.wrapping_add(v.wrapping_mul(0xbf58_476d_1ce4_e5b9)).rotate_left(31);
        z ^= z >> 29;
        z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    }
    ChaCha8Rng::seed_from_u64(z)
}

/// Mean squared error over the visible horizon of one training window;
/// parameter gradients are accumulated into `grads`.
fn window_loss(
    model: &TcnModel,
    frame: &FeatureFrame,
    origin: usize,
    limit: usize,
    grads: &mut TcnModel,
) -> Result<f64, TrainError> {
    let x = frame.window(&WindowSpec::at(origin).limited(limit), &model.hp)?;
    let valid = model.hp.horizon.min(limit - origin);
    let (raw, cache) = model.forward_train(&x)?;
    let mut d = vec![0.0; raw.len()];
    let mut loss = 0.0;
    for k in 0..valid {
        let e = model.transform(raw[k]) - frame.encoded_target(origin + k);
        loss += e * e;
        d[k] = 2.0 * e * model.transform_grad(raw[k]) / valid as f64;
    }
    model.backward(&cache, &d, grads)?;
    Ok(loss / valid as f64)
}

/// One pass over `origins` in batches. Returns the mean pre-update loss.
pub fn train_epoch(
    model: &mut TcnModel,
    adam: &mut AdamState,
    frame: &FeatureFrame,
    origins: &[usize],
    limit: usize,
    batch_size: usize,
    cfg: &AdamConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for batch in origins.chunks(batch_size) {
        let mut grads = model.zeros_like();
        for &o in batch {
            total += window_loss(model, frame, o, limit, &mut grads)?;
        }
        let scale = 1.0 / batch.len() as f64;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
        adam_step(model.tensors_mut(), grads.tensors(), adam, cfg)?;
    }
    Ok(total / origins.len() as f64)
}

/// Decoded forecast for the first `len` records from `origin`.
pub fn validate_at(model: &TcnModel, frame: &FeatureFrame, origin: usize, len: usize) -> Result<Vec<f64>, TrainError> {
    let f = crate::tcn::forecast(model, frame, &WindowSpec::at(origin))?;
    Ok(f.values[..len.min(f.values.len())].to_vec())
}

/// Trains through every step. Equivalent to `resume(FitState::new(model), ..)`.
pub fn fit(
    model: TcnModel,
    ds: &ArrivalDataset,
    steps: &[CvStep],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitState, TrainError> {
    resume(FitState::new(model), ds, steps, cfg, seed, None)
}

/// Continues `state` from its next step; stops after `stop_after` steps
/// when given (used to checkpoint mid-run).
pub fn resume(
    state: FitState,
    ds: &ArrivalDataset,
    steps: &[CvStep],
    cfg: &TrainConfig,
    seed: u64,
    stop_after: Option<usize>,
) -> Result<FitState, TrainError> {
    resume_named(state, ds, steps, cfg, seed, stop_after, None)
}

/// As [`resume`]; when `names` is given, `names[i]` are forecast function
/// names for the predict range of `steps[i]` and module B is also validated
/// with them.
pub fn resume_named(
    mut state: FitState,
    ds: &ArrivalDataset,
    steps: &[CvStep],
    cfg: &TrainConfig,
    seed: u64,
    stop_after: Option<usize>,
    names: Option<&[Vec<u32>]>,
) -> Result<FitState, TrainError> {
    cfg.validate()?;
    if names.is_some_and(|n| n.len() != steps.len()) {
        return Err(TrainError::Config("one name list per step is required".into()));
    }
    let hp = state.model.hp;
    if let Some(s) = steps.iter().find(|s| s.predict_range.len() > hp.horizon) {
        return Err(TrainError::Config(format!(
            "step {} predicts {} records but the model horizon is {}",
            s.step_index,
            s.predict_range.len(),
            hp.horizon
        )));
    }
    let clock = Instant::now();
    let start_elapsed = state.elapsed_secs;
    let over_budget =
        |clock: &Instant| start_elapsed + clock.elapsed().as_secs_f64() >= cfg.budget.wall_clock_secs;
    let adam_cfg = cfg.adam();
    let mut done_now = 0;

    while state.next_step < steps.len() {
        if stop_after.is_some_and(|k| done_now >= k) {
            break;
        }
        if over_budget(&clock) {
            state.budget_exhausted = true;
            break;
        }
        let step = &steps[state.next_step];
        let frame = FeatureFrame::new(ds, state.model.target, step.train_range.clone())?;
        if !cfg.incremental && state.next_step > 0 {
            state.model = build_model(&hp, state.model.target, state.model.vocab_size, seed)?;
            state.adam = AdamState::default();
        }
        let limit = step.train_range.end;
        let all: Vec<usize> = (step.train_range.start.max(1)..limit).collect();
        let mut trace = Vec::new();
        let mut best = f64::INFINITY;
        let mut wait = 0;
        for epoch in 0..cfg.budget.max_epochs {
            if over_budget(&clock) {
                state.budget_exhausted = true;
                break;
            }
            let mut rng = derive_rng(seed, step.step_index, epoch);
            let mut origins = all.clone();
            origins.shuffle(&mut rng);
            origins.truncate(cfg.windows_per_epoch);
            let loss = train_epoch(
                &mut state.model,
                &mut state.adam,
                &frame,
                &origins,
                limit,
                cfg.batch_size,
                &adam_cfg,
            )?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: step.step_index,
                    epoch,
                });
            }
            trace.push(loss);
            if loss < best * (1.0 - cfg.min_improvement) {
                best = loss;
                wait = 0;
            } else {
                wait += 1;
                if wait >= cfg.budget.patience {
                    break;
                }
            }
        }

        let named_predictions = match names {
            Some(n) if !step.predict_range.is_empty() => {
                let spec = WindowSpec::with_names(step.predict_range.start, n[state.next_step].clone());
                let f = crate::tcn::forecast(&state.model, &frame, &spec)?;
                f.values[..step.predict_range.len()].to_vec()
            }
            _ => Vec::new(),
        };
        let (predictions, truth, report) = if step.predict_range.is_empty() {
            (Vec::new(), Vec::new(), None)
        } else {
            let origin = step.predict_range.start;
            let p = validate_at(&state.model, &frame, origin, step.predict_range.len())?;
            let y: Vec<f64> = step.predict_range.clone().map(|r| frame.target_value(r)).collect();
            let rep = MetricReport::compute(&y, &p, true).ok();
            (p, y, rep)
        };
        state.steps.push(StepRecord {
            step_index: step.step_index,
            train_range: step.train_range.clone(),
            predict_range: step.predict_range.clone(),
            epochs_run: trace.len(),
            loss_trace: trace,
            predictions,
            named_predictions,
            truth,
            metrics: report,
        });
        state.next_step += 1;
        done_now += 1;
        if state.budget_exhausted {
            break;
        }
    }
    state.elapsed_secs = start_elapsed + clock.elapsed().as_secs_f64();
    Ok(state)
}
