//! Temporal convolutional forecaster.
//!
//! A window is a `(features, context + horizon)` grid: the first `context`
//! positions carry observed targets and covariates, the last `horizon`
//! positions carry only the covariates known in advance. The network is
//! `premix (1x1) -> n_b blocks of n_c residual cells -> head (1x1)` and the
//! head output at the horizon positions is the forecast, emitted in a single
//! pass. The target channel of horizon positions is zeroed inside the model,
//! so predictions can never be fed back as inputs.
//!
//! Cell `j` of every block uses dilations `2^j` and `3 * 2^j` for its two
//! convolutions. The cell spans `4 * 2^j` steps, the same as two
//! convolutions at dilation `2^(j+1)`, but the offsets it combines reach
//! every lag inside the receptive field, odd ones included. With kernel
//! width 2 the receptive field is `4 n_b (2^n_c - 1) + 1`.

mod checkpoint;
pub mod features;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, ConvParams, Grid, NnError, Params, ResidualCell};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use features::{
    covariate_rows, module_a_target, module_b_target, per_record_target, reconstruct_arrivals, CovariateRow,
    FeatureFrame, FutureNames, NormStats, WindowSpec, N_FEATURES,
};

#[derive(Debug, Error)]
pub enum TcnError {
    #[error("invalid hyper-parameters: {0}")]
    HyperParams(String),
    #[error("channel chain mismatch: {0}")]
    ChannelChain(String),
    #[error("context of {got} positions is shorter than the receptive field {need}")]
    ShortContext { need: usize, got: usize },
    #[error("window out of range: {0}")]
    Window(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which series a model forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ForecastTarget {
    /// Module A: numeric function id of upcoming instances.
    FunctionName,
    /// Module B: inter-arrival gap (minutes) of upcoming instances.
    ArrivalTime,
}

impl ForecastTarget {
    pub fn label(self) -> &'static str {
        match self {
            ForecastTarget::FunctionName => "A",
            ForecastTarget::ArrivalTime => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcnHyperParams {
    pub n_blocks: usize,
    pub cells_per_block: usize,
    pub hidden_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel_width: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Context positions fed before the horizon; at least the receptive field.
    pub context: usize,
}

fn default_kernel() -> usize {
    2
}
fn default_horizon() -> usize {
    500
}

impl TcnHyperParams {
    /// Smallest valid configuration with the context set to its receptive field.
    pub fn new(n_blocks: usize, cells_per_block: usize, hidden_channels: usize, horizon: usize) -> Self {
        let mut hp = Self {
            n_blocks,
            cells_per_block,
            hidden_channels,
            kernel_width: 2,
            horizon,
            context: 0,
        };
        hp.context = receptive_field(&hp);
        hp
    }

    pub fn validate(&self) -> Result<(), TcnError> {
        let bad = |m: String| Err(TcnError::HyperParams(m));
        if !(1..=2).contains(&self.n_blocks) {
            return bad(format!("n_blocks {} outside 1..=2", self.n_blocks));
        }
        if !(3..=6).contains(&self.cells_per_block) {
            return bad(format!("cells_per_block {} outside 3..=6", self.cells_per_block));
        }
        if !(16..=256).contains(&self.hidden_channels) {
            return bad(format!("hidden_channels {} outside 16..=256", self.hidden_channels));
        }
        if self.kernel_width < 2 {
            return bad(format!("kernel_width {} must be >= 2", self.kernel_width));
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        let rf = receptive_field(self);
        if self.context < rf {
            return bad(format!("context {} shorter than receptive field {rf}", self.context));
        }
        Ok(())
    }

    /// Dilations of the two convolutions of cell `j` within a block.
    pub fn dilations(cell: usize) -> (usize, usize) {
        (1 << cell, 3 << cell)
    }

    pub fn window_len(&self) -> usize {
        self.context + self.horizon
    }
}

/// Positions that can influence one output: `4 n_b (2^n_c - 1) + 1` for
/// kernel width 2, scaled by `kernel_width - 1` in general.
pub fn receptive_field(hp: &TcnHyperParams) -> usize {
    4 * (hp.kernel_width - 1) * hp.n_blocks * ((1usize << hp.cells_per_block) - 1) + 1
}

/// Premix, residual blocks and forecast head sharing one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnModel {
    pub hp: TcnHyperParams,
    pub target: ForecastTarget,
    pub vocab_size: usize,
    pub premix: ConvParams,
    pub blocks: Vec<Vec<ResidualCell>>,
    pub head: ConvParams,
}

/// Deterministically initialises a model for `hp`.
pub fn build_model(
    hp: &TcnHyperParams,
    target: ForecastTarget,
    vocab_size: usize,
    seed: u64,
) -> Result<TcnModel, TcnError> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = hp.hidden_channels;
    let premix = ConvParams::he_uniform(N_FEATURES, c, 1, 1, &mut rng)?;
    let mut blocks = Vec::with_capacity(hp.n_blocks);
    for _ in 0..hp.n_blocks {
        let cells = (0..hp.cells_per_block)
            .map(|j| ResidualCell::with_dilations(c, c, hp.kernel_width, TcnHyperParams::dilations(j), &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        blocks.push(cells);
    }
    let mut head = ConvParams::he_uniform(c, 1, 1, 1, &mut rng)?;
    // small head keeps initial forecasts near zero
    head.weight.iter_mut().for_each(|w| *w *= 0.1);
    TcnModel::from_parts(*hp, target, vocab_size, premix, blocks, head)
}

/// Activations kept for one backward pass.
pub struct TcnCache {
    premix_in: Grid,
    cells: Vec<nn::CellCache>,
    hidden: Grid,
}

impl TcnModel {
    /// Assembles a model from layers, checking that every shape chains.
    pub fn from_parts(
        hp: TcnHyperParams,
        target: ForecastTarget,
        vocab_size: usize,
        premix: ConvParams,
        blocks: Vec<Vec<ResidualCell>>,
        head: ConvParams,
    ) -> Result<Self, TcnError> {
        let chain = |m: String| Err(TcnError::ChannelChain(m));
        if premix.c_in != N_FEATURES || premix.kernel != 1 {
            return chain(format!(
                "premix must be a 1x1 map from {N_FEATURES} features, got {}x{}",
                premix.c_in, premix.kernel
            ));
        }
        let mut width = premix.c_out;
        for (b, block) in blocks.iter().enumerate() {
            for (j, cell) in block.iter().enumerate() {
                cell.validate()?;
                if cell.c_in() != width {
                    return chain(format!("block {b} cell {j} expects {} channels, gets {width}", cell.c_in()));
                }
                width = cell.c_out();
            }
        }
        if head.c_in != width || head.c_out != 1 || head.kernel != 1 {
            return chain(format!(
                "head must map {width} channels to 1 output with a 1x1 kernel, got {}->{} k{}",
                head.c_in, head.c_out, head.kernel
            ));
        }
        Ok(Self {
            hp,
            target,
            vocab_size,
            premix,
            blocks,
            head,
        })
    }

    /// Receptive field measured from the layer dilations.
    pub fn structural_receptive_field(&self) -> usize {
        1 + self.blocks.iter().flatten().map(ResidualCell::lookback).sum::<usize>()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hp: self.hp,
            target: self.target,
            vocab_size: self.vocab_size,
            premix: self.premix.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| b.iter().map(ResidualCell::zeros_like).collect())
                .collect(),
            head: self.head.zeros_like(),
        }
    }

    fn check_window(&self, x: &Grid) -> Result<(), TcnError> {
        if x.channels() != N_FEATURES {
            return Err(TcnError::Window(format!("{} feature channels, expected {N_FEATURES}", x.channels())));
        }
        if x.time() != self.hp.window_len() {
            return Err(TcnError::Window(format!(
                "window of {} positions, expected {}",
                x.time(),
                self.hp.window_len()
            )));
        }
        Ok(())
    }

    /// Hidden state at every position; horizon targets are masked first.
    fn trunk(&self, x: &Grid) -> (Grid, Vec<nn::CellCache>, Grid) {
        let mut input = x.clone();
        let ctx = self.hp.context;
        for t in ctx..input.time() {
            input.set(features::TARGET, t, 0.0);
        }
        let mut h = nn::conv::forward(&input, &self.premix);
        let mut caches = Vec::new();
        for cell in self.blocks.iter().flatten() {
            let (y, cache) = nn::cell::forward(&h, cell);
            caches.push(cache);
            h = y;
        }
        (input, caches, h)
    }

    /// Raw head output at every window position (used by locality probes).
    pub fn forward_all(&self, x: &Grid) -> Result<Vec<f64>, TcnError> {
        self.check_window(x)?;
        let (_, _, h) = self.trunk(x);
        Ok(nn::conv::forward(&h, &self.head).into_data())
    }

    /// Raw (untransformed) outputs for the `horizon` positions.
    pub fn forward(&self, x: &Grid) -> Result<Vec<f64>, TcnError> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Grid) -> Result<(Vec<f64>, TcnCache), TcnError> {
        self.check_window(x)?;
        let (premix_in, cells, hidden) = self.trunk(x);
        let out = nn::conv::forward(&hidden, &self.head);
        let raw = out.row(0)[self.hp.context..].to_vec();
        Ok((
            raw,
            TcnCache {
                premix_in,
                cells,
                hidden,
            },
        ))
    }

    /// Accumulates parameter gradients for `d_raw` (one entry per horizon step).
    pub fn backward(&self, cache: &TcnCache, d_raw: &[f64], grads: &mut TcnModel) -> Result<(), TcnError> {
        if d_raw.len() != self.hp.horizon {
            return Err(TcnError::Window(format!("{} output gradients, horizon {}", d_raw.len(), self.hp.horizon)));
        }
        let len = self.hp.window_len();
        let mut up = Grid::zeros(1, len);
        up.row_mut(0)[self.hp.context..].copy_from_slice(d_raw);
        let mut d = nn::conv::backward(&cache.hidden, &self.head, &up, &mut grads.head);
        let cells: Vec<&ResidualCell> = self.blocks.iter().flatten().collect();
        let mut gcells: Vec<&mut ResidualCell> = grads.blocks.iter_mut().flatten().collect();
        for i in (0..cells.len()).rev() {
            d = nn::cell::backward(&cache.cells[i], cells[i], &d, gcells[i]);
        }
        nn::conv::backward(&cache.premix_in, &self.premix, &d, &mut grads.premix);
        Ok(())
    }

    /// Maps raw head outputs to target space for this model's target kind,
    /// before de-normalisation.
    pub fn transform(&self, raw: f64) -> f64 {
        match self.target {
            ForecastTarget::FunctionName => raw,
            ForecastTarget::ArrivalTime => nn::softplus(raw),
        }
    }

    /// Derivative of [`TcnModel::transform`].
    pub fn transform_grad(&self, raw: f64) -> f64 {
        match self.target {
            ForecastTarget::FunctionName => 1.0,
            ForecastTarget::ArrivalTime => nn::sigmoid(raw),
        }
    }
}

impl Params for TcnModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.premix.tensors();
        for cell in self.blocks.iter().flatten() {
            v.extend(cell.tensors());
        }
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.premix.tensors_mut();
        for cell in self.blocks.iter_mut().flatten() {
            v.extend(cell.tensors_mut());
        }
        v.extend(self.head.tensors_mut());
        v
    }
}

/// A decoded forecast for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub target: ForecastTarget,
    /// Module A: function ids (real-valued); module B: gaps in minutes.
    pub values: Vec<f64>,
    /// Record indices `[start, end)` of the conditioning context.
    pub context_span: (usize, usize),
    /// Arrival minute of the last context record.
    pub origin_minute: u64,
}

impl ForecastResult {
    /// Absolute arrival minutes implied by module B gaps.
    pub fn arrival_minutes(&self) -> Vec<f64> {
        reconstruct_arrivals(self.origin_minute as f64, &self.values)[1..].to_vec()
    }

    /// Module A ids rounded and clamped to the vocabulary.
    pub fn function_ids(&self, vocab_size: usize) -> Vec<u32> {
        let max = vocab_size.saturating_sub(1) as f64;
        self.values.iter().map(|v| v.round().clamp(0.0, max) as u32).collect()
    }
}

/// Direct multi-horizon forecast from the context ending at `spec.origin`.
pub fn forecast(model: &TcnModel, frame: &FeatureFrame, spec: &WindowSpec) -> Result<ForecastResult, TcnError> {
    if frame.target() != model.target {
        return Err(TcnError::Window("feature frame built for the other target".into()));
    }
    let x = frame.window(spec, &model.hp)?;
    let raw = model.forward(&x)?;
    let values = raw
        .iter()
        .map(|&r| frame.stats().decode(model.target, model.transform(r)))
        .collect();
    Ok(ForecastResult {
        target: model.target,
        values,
        context_span: (spec.origin.saturating_sub(model.hp.context), spec.origin),
        origin_minute: frame.origin_minute(spec.origin),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::Rng;

    fn random_window(hp: &TcnHyperParams, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = hp.window_len();
        Grid::from_vec(N_FEATURES, len, (0..N_FEATURES * len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn receptive_field_formula() {
        assert_eq!(receptive_field(&TcnHyperParams::new(1, 3, 16, 10)), 29);
        assert_eq!(receptive_field(&TcnHyperParams::new(2, 6, 16, 10)), 505);
        for (nb, nc) in [(1, 3), (1, 4), (2, 3), (2, 6)] {
            let hp = TcnHyperParams::new(nb, nc, 16, 4);
            let m = build_model(&hp, ForecastTarget::ArrivalTime, 3, 0).unwrap();
            assert_eq!(m.structural_receptive_field(), receptive_field(&hp));
        }
    }

    #[test]
    fn lag_one_is_reachable() {
        let hp = TcnHyperParams::new(1, 3, 16, 4);
        let m = build_model(&hp, ForecastTarget::ArrivalTime, 4, 7).unwrap();
        let x = random_window(&hp, 8);
        let base = m.forward_all(&x).unwrap();
        let last = hp.window_len() - 1;
        for lag in 1..receptive_field(&hp) {
            let mut xp = x.clone();
            xp.set(features::FUNC, last - lag, 20.0);
            assert_ne!(m.forward_all(&xp).unwrap()[last], base[last], "lag {lag} unreachable");
        }
    }

    #[test]
    fn deterministic_construction() {
        let hp = TcnHyperParams::new(1, 3, 16, 8);
        let a = build_model(&hp, ForecastTarget::FunctionName, 5, 42).unwrap();
        let b = build_model(&hp, ForecastTarget::FunctionName, 5, 42).unwrap();
        assert_eq!(a.flat(), b.flat());
        let c = build_model(&hp, ForecastTarget::FunctionName, 5, 43).unwrap();
        assert_ne!(a.flat(), c.flat());
    }

    #[test]
    fn parameter_count_closed_form() {
        for (nb, nc, ch) in [(1, 3, 16), (2, 4, 24), (1, 6, 32)] {
            let hp = TcnHyperParams::new(nb, nc, ch, 8);
            let m = build_model(&hp, ForecastTarget::ArrivalTime, 3, 0).unwrap();
            let k = hp.kernel_width;
            let premix = N_FEATURES * ch + ch;
            let cell = 2 * (ch * ch * k + ch) + 4 * ch;
            let head = ch + 1;
            assert_eq!(m.param_count(), premix + nb * nc * cell + head);
        }
    }

    #[test]
    fn invalid_hyper_params_and_chains() {
        assert!(build_model(&TcnHyperParams::new(3, 3, 16, 8), ForecastTarget::FunctionName, 1, 0).is_err());
        assert!(build_model(&TcnHyperParams::new(1, 2, 16, 8), ForecastTarget::FunctionName, 1, 0).is_err());
        assert!(build_model(&TcnHyperParams::new(1, 3, 8, 8), ForecastTarget::FunctionName, 1, 0).is_err());
        let mut hp = TcnHyperParams::new(1, 3, 16, 8);
        hp.context = 10;
        assert!(matches!(
            build_model(&hp, ForecastTarget::FunctionName, 1, 0),
            Err(TcnError::HyperParams(_))
        ));

        let hp = TcnHyperParams::new(1, 3, 16, 8);
        let m = build_model(&hp, ForecastTarget::FunctionName, 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut blocks = m.blocks.clone();
        blocks[0][1] = ResidualCell::new(8, 16, 2, 4, &mut rng).unwrap();
        let err = TcnModel::from_parts(hp, m.target, 1, m.premix.clone(), blocks, m.head.clone());
        assert!(matches!(err, Err(TcnError::ChannelChain(_))));
        let bad_head = ConvParams::zeros(8, 1, 1, 1).unwrap();
        let err = TcnModel::from_parts(hp, m.target, 1, m.premix.clone(), m.blocks.clone(), bad_head);
        assert!(matches!(err, Err(TcnError::ChannelChain(_))));
    }

    #[test]
    fn zero_head_gives_zero_raw_output() {
        let hp = TcnHyperParams::new(1, 3, 16, 6);
        let mut m = build_model(&hp, ForecastTarget::FunctionName, 4, 1).unwrap();
        m.head = m.head.zeros_like();
        let raw = m.forward(&random_window(&hp, 2)).unwrap();
        assert_eq!(raw, vec![0.0; 6]);
    }

    #[test]
    fn horizon_targets_cannot_feed_back() {
        let hp = TcnHyperParams::new(1, 3, 16, 12);
        let m = build_model(&hp, ForecastTarget::ArrivalTime, 4, 1).unwrap();
        let x = random_window(&hp, 3);
        let base = m.forward(&x).unwrap();
        for k in 1..hp.horizon {
            // write earlier predictions into the target slots of steps < k
            let mut fed = x.clone();
            for s in 0..k {
                fed.set(features::TARGET, hp.context + s, base[s] * 3.0 + 1.0);
            }
            assert_eq!(m.forward(&fed).unwrap()[k], base[k]);
        }
    }

    #[test]
    fn causality_and_receptive_field_probe() {
        for (nb, nc) in [(1, 3), (1, 4), (2, 3)] {
            let hp = TcnHyperParams::new(nb, nc, 16, 4);
            let m = build_model(&hp, ForecastTarget::ArrivalTime, 4, 7).unwrap();
            let x = random_window(&hp, 8);
            let base = m.forward_all(&x).unwrap();
            let len = hp.window_len();
            let rf = receptive_field(&hp);
            for t in [0, len / 3, len / 2, len - 2] {
                let mut xp = x.clone();
                xp.set(features::OWNER, t + 1, 9.0);
                let y = m.forward_all(&xp).unwrap();
                assert_eq!(&y[..=t], &base[..=t], "future leak at {t}");
            }
            let last = len - 1;
            let mut old = x.clone();
            old.set(features::FUNC, last - rf, 50.0);
            assert_eq!(m.forward_all(&old).unwrap()[last], base[last]);
            let mut edge = x.clone();
            edge.set(features::FUNC, last + 1 - rf, 50.0);
            assert_ne!(m.forward_all(&edge).unwrap()[last], base[last]);
        }
    }

    #[test]
    fn full_model_gradient_check() {
        let hp = TcnHyperParams::new(1, 3, 16, 4);
        let mut m = build_model(&hp, ForecastTarget::ArrivalTime, 4, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for cell in m.blocks.iter_mut().flatten() {
            for n in [&mut cell.norm1, &mut cell.norm2] {
                n.gain.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
                n.offset.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
            }
        }
        let x = random_window(&hp, 9);
        let r: Vec<f64> = (0..hp.horizon).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |model: &TcnModel| -> f64 {
            model.forward(&x).unwrap().iter().zip(&r).map(|(y, w)| model.transform(*y) * w).sum()
        };
        let (raw, cache) = m.forward_train(&x).unwrap();
        let d: Vec<f64> = raw.iter().zip(&r).map(|(y, w)| m.transform_grad(*y) * w).collect();
        let mut g = m.zeros_like();
        m.backward(&cache, &d, &mut g).unwrap();
        let rep = grad_check(&m.flat(), &g.flat(), |v| {
            let mut q = m.clone();
            q.set_flat(v).unwrap();
            loss(&q)
        }, 1e-5, 1e-4);
        assert!(rep.passed, "{rep:?}");
    }
}
