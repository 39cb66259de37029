//! Landmark hyper-parameter exploration with one refinement round.
//!
//! Landmarks are the 8 corners of `(n_blocks, cells, channels)` at the
//! geometric-mid learning rate, plus the mid-cells/mid-channels point for
//! each block count at the low and high learning rate. Refinement steps each
//! axis around the best landmark by half the corner-to-mid distance.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, make_cv_steps, FitState, TrainConfig, TrainError, ValidationScore};
use crate::nn::Params;
use crate::tcn::{build_model, receptive_field, ForecastTarget, TcnHyperParams};
use crate::trace::ArrivalDataset;

pub const LANDMARK_COUNT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub n_blocks: [usize; 2],
    pub cells_per_block: [usize; 2],
    pub hidden_channels: [usize; 2],
    pub lr: [f64; 2],
    pub horizon: usize,
    /// Context used when it exceeds a candidate's receptive field.
    #[serde(default)]
    pub min_context: usize,
    #[serde(default = "default_cap")]
    pub memory_cap_bytes: u64,
    #[serde(default = "default_refine")]
    pub refine: bool,
}

fn default_cap() -> u64 {
    2 << 30
}
fn default_refine() -> bool {
    true
}

impl SearchSpace {
    pub fn new(channels: [usize; 2], horizon: usize) -> Self {
        Self {
            n_blocks: [1, 2],
            cells_per_block: [3, 6],
            hidden_channels: channels,
            lr: [1e-3, 1e-2],
            horizon,
            min_context: 0,
            memory_cap_bytes: default_cap(),
            refine: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(format!("search space: {m}")));
        let [b0, b1] = self.n_blocks;
        let [c0, c1] = self.cells_per_block;
        let [h0, h1] = self.hidden_channels;
        let [l0, l1] = self.lr;
        if !(1 <= b0 && b0 < b1 && b1 <= 2) {
            return bad(format!("n_blocks {:?} must be [1, 2]", self.n_blocks));
        }
        if !(3 <= c0 && c0 + 2 <= c1 && c1 <= 6) {
            return bad(format!("cells_per_block {:?} needs a midpoint inside 3..=6", self.cells_per_block));
        }
        if !(16 <= h0 && h0 < h1 && h1 <= 256) {
            return bad(format!("hidden_channels {:?} must be increasing inside 16..=256", self.hidden_channels));
        }
        if !(l0 > 0.0 && l0 < l1 && l1.is_finite()) {
            return bad(format!("lr {:?} must be increasing and positive", self.lr));
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        Ok(())
    }

    fn mid_cells(&self) -> usize {
        (self.cells_per_block[0] + self.cells_per_block[1]) / 2
    }

    fn mid_channels(&self) -> usize {
        let [lo, hi] = self.hidden_channels;
        let g = ((lo * hi) as f64).sqrt();
        let r = ((g / 8.0).round() as usize * 8).clamp(lo, hi);
        if r == lo || r == hi {
            (lo + hi) / 2
        } else {
            r
        }
    }

    fn mid_lr(&self) -> f64 {
        (self.lr[0] * self.lr[1]).sqrt()
    }

    pub fn hyper_params(&self, c: &Candidate) -> TcnHyperParams {
        let mut hp = TcnHyperParams::new(c.n_blocks, c.cells_per_block, c.hidden_channels, self.horizon);
        hp.context = receptive_field(&hp).max(self.min_context);
        hp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub n_blocks: usize,
    pub cells_per_block: usize,
    pub hidden_channels: usize,
    pub lr: f64,
}

impl Candidate {
    fn key(&self) -> (usize, usize, usize, u64) {
        (self.n_blocks, self.cells_per_block, self.hidden_channels, self.lr.to_bits())
    }
}

/// The 12 landmark configurations; pairwise distinct by construction.
pub fn landmarks(space: &SearchSpace) -> Result<Vec<Candidate>, TrainError> {
    space.validate()?;
    let mut out = Vec::with_capacity(LANDMARK_COUNT);
    for &n_blocks in &space.n_blocks {
        for &cells_per_block in &space.cells_per_block {
            for &hidden_channels in &space.hidden_channels {
                out.push(Candidate {
                    n_blocks,
                    cells_per_block,
                    hidden_channels,
                    lr: space.mid_lr(),
                });
            }
        }
    }
    for &n_blocks in &space.n_blocks {
        for &lr in &space.lr {
            out.push(Candidate {
                n_blocks,
                cells_per_block: space.mid_cells(),
                hidden_channels: space.mid_channels(),
                lr,
            });
        }
    }
    Ok(out)
}

/// Neighbours of `best` at half the landmark spacing, excluding anything in
/// `evaluated`.
pub fn refinements(space: &SearchSpace, best: &Candidate, evaluated: &[Candidate]) -> Vec<Candidate> {
    let [c0, c1] = space.cells_per_block;
    let [h0, h1] = space.hidden_channels;
    let [l0, l1] = space.lr;
    let dc = ((c1 - c0) as f64 / 4.0).round().max(1.0) as usize;
    let dh = (((h1 - h0) as f64 / 4.0 / 8.0).round().max(1.0) as usize) * 8;
    let fl = (l1 / l0).powf(0.25);
    let mut out: Vec<Candidate> = Vec::new();
    let mut push = |c: Candidate| {
        let dup = |o: &Candidate| o.key() == c.key();
        if !dup(best) && !evaluated.iter().any(dup) && !out.iter().any(dup) {
            out.push(c);
        }
    };
    push(Candidate {
        cells_per_block: best.cells_per_block.saturating_sub(dc).max(c0),
        ..*best
    });
    push(Candidate {
        cells_per_block: (best.cells_per_block + dc).min(c1),
        ..*best
    });
    push(Candidate {
        hidden_channels: best.hidden_channels.saturating_sub(dh).max(h0),
        ..*best
    });
    push(Candidate {
        hidden_channels: (best.hidden_channels + dh).min(h1),
        ..*best
    });
    push(Candidate {
        lr: (best.lr / fl).max(l0),
        ..*best
    });
    push(Candidate {
        lr: (best.lr * fl).min(l1),
        ..*best
    });
    out
}

/// Rough peak bytes of one training batch: parameters with gradient and
/// Adam moments, plus the cached activations of every window.
pub fn estimate_memory_bytes(hp: &TcnHyperParams, batch: usize) -> u64 {
    let c = hp.hidden_channels as u64;
    let k = hp.kernel_width as u64;
    let cells = (hp.n_blocks * hp.cells_per_block) as u64;
    let params = 9 * c + c + cells * (2 * (c * c * k + c) + 4 * c) + c + 1;
    let acts = batch as u64 * hp.window_len() as u64 * c * (cells * 12 + 4);
    8 * (4 * params + acts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Landmark,
    Refinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CandidateStatus {
    Ok,
    BudgetExhausted,
    ResourceSkip { estimate_bytes: u64 },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub phase: Phase,
    pub candidate: Candidate,
    pub status: CandidateStatus,
    pub score: Option<ValidationScore>,
    pub param_count: usize,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub leaderboard: Vec<LeaderboardEntry>,
    /// Best-ranked candidate with its fitted state.
    pub best: Option<(Candidate, FitState)>,
    /// Whether a refinement beat every landmark; `None` without refinements.
    pub refinement_improved: Option<bool>,
}

struct Evaluated {
    entry: LeaderboardEntry,
    state: Option<FitState>,
}

fn evaluate(
    space: &SearchSpace,
    cand: &Candidate,
    phase: Phase,
    ds: &ArrivalDataset,
    target: ForecastTarget,
    cfg: &TrainConfig,
    seed: u64,
) -> Evaluated {
    let hp = space.hyper_params(cand);
    let mut entry = LeaderboardEntry {
        rank: 0,
        phase,
        candidate: *cand,
        status: CandidateStatus::Ok,
        score: None,
        param_count: 0,
    };
    let est = estimate_memory_bytes(&hp, cfg.batch_size);
    if est > space.memory_cap_bytes {
        entry.status = CandidateStatus::ResourceSkip { estimate_bytes: est };
        return Evaluated { entry, state: None };
    }
    let run = || -> Result<FitState, TrainError> {
        let model = build_model(&hp, target, ds.vocab_size(), seed)?;
        let steps = make_cv_steps(ds.len(), hp.horizon)?;
        let c = TrainConfig { lr: cand.lr, ..*cfg };
        fit(model, ds, &steps, &c, seed)
    };
    match run() {
        Ok(state) => {
            entry.param_count = state.model.param_count();
            entry.score = state.validation_score();
            if state.budget_exhausted {
                entry.status = CandidateStatus::BudgetExhausted;
            } else if entry.score.is_none() {
                entry.status = CandidateStatus::Failed("validation score undefined".into());
            }
            Evaluated {
                entry,
                state: Some(state),
            }
        }
        Err(e) => {
            entry.status = CandidateStatus::Failed(e.to_string());
            Evaluated { entry, state: None }
        }
    }
}

fn compare(a: &LeaderboardEntry, b: &LeaderboardEntry) -> Ordering {
    let scored = |e: &LeaderboardEntry| e.score.is_some() && !matches!(e.status, CandidateStatus::Failed(_));
    match (scored(a), scored(b)) {
        (true, false) => return Ordering::Less,
        (false, true) => return Ordering::Greater,
        (true, true) => {
            let (sa, sb) = (a.score.unwrap(), b.score.unwrap());
            let ord = sa.nrmse.total_cmp(&sb.nrmse).then_with(|| {
                let ra = sa.spearman.unwrap_or(f64::NEG_INFINITY);
                let rb = sb.spearman.unwrap_or(f64::NEG_INFINITY);
                rb.total_cmp(&ra)
            });
            if ord != Ordering::Equal {
                return ord;
            }
        }
        (false, false) => {}
    }
    a.candidate.key().cmp(&b.candidate.key())
}

/// Evaluates all landmarks in parallel, then one refinement round around
/// the best. Every candidate gets an equal slice of the wall-clock budget.
pub fn landmark_search(
    space: &SearchSpace,
    ds: &ArrivalDataset,
    target: ForecastTarget,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SearchOutcome, TrainError> {
    cfg.validate()?;
    let marks = landmarks(space)?;
    let rounds = if space.refine { 2.0 } else { 1.0 };
    let parallel = rayon::current_num_threads().max(1) as f64;
    let slots = (LANDMARK_COUNT as f64 / parallel).ceil() * rounds;
    let mut slice_cfg = *cfg;
    slice_cfg.budget.wall_clock_secs = cfg.budget.wall_clock_secs / slots;

    let run = |cands: &[Candidate], phase: Phase| -> Vec<Evaluated> {
        cands
            .par_iter()
            .map(|c| evaluate(space, c, phase, ds, target, &slice_cfg, seed))
            .collect()
    };
    let mut results = run(&marks, Phase::Landmark);
    let best_mark = results
        .iter()
        .map(|r| &r.entry)
        .min_by(|a, b| compare(a, b))
        .filter(|e| e.score.is_some())
        .cloned();

    let mut refinement_improved = None;
    if let (true, Some(best)) = (space.refine, &best_mark) {
        let refs = refinements(space, &best.candidate, &marks);
        if !refs.is_empty() {
            let refined = run(&refs, Phase::Refinement);
            let best_ref = refined
                .iter()
                .filter_map(|r| r.entry.score.map(|s| s.nrmse))
                .fold(f64::INFINITY, f64::min);
            refinement_improved = Some(best_ref < best.score.unwrap().nrmse);
            results.extend(refined);
        }
    }

    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&i, &j| compare(&results[i].entry, &results[j].entry));
    if results.iter().all(|r| r.entry.score.is_none()) {
        return Err(TrainError::AllFailed(
            results
                .iter()
                .map(|r| format!("{:?}: {:?}", r.entry.candidate, r.entry.status))
                .collect(),
        ));
    }
    let mut slots: Vec<Option<Evaluated>> = results.into_iter().map(Some).collect();
    let mut leaderboard = Vec::with_capacity(order.len());
    let mut best = None;
    for (rank, &i) in order.iter().enumerate() {
        let mut ev = slots[i].take().expect("each index once");
        ev.entry.rank = rank + 1;
        if rank == 0 {
            best = ev.state.take().map(|s| (ev.entry.candidate, s));
        }
        leaderboard.push(ev.entry);
    }
    Ok(SearchOutcome {
        leaderboard,
        best,
        refinement_improved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_distinct_landmarks_cover_corners() {
        let space = SearchSpace::new([16, 64], 50);
        let m = landmarks(&space).unwrap();
        assert_eq!(m.len(), LANDMARK_COUNT);
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                assert_ne!(m[i].key(), m[j].key());
            }
        }
        for nb in [1, 2] {
            for nc in [3, 6] {
                for ch in [16, 64] {
                    assert!(m.iter().any(|c| (c.n_blocks, c.cells_per_block, c.hidden_channels) == (nb, nc, ch)));
                }
            }
        }
        assert!(m.iter().any(|c| c.lr == 1e-3) && m.iter().any(|c| c.lr == 1e-2));
    }

    #[test]
    fn degenerate_spaces_rejected() {
        let mut s = SearchSpace::new([16, 16], 50);
        assert!(landmarks(&s).is_err());
        s.hidden_channels = [16, 32];
        s.cells_per_block = [3, 4];
        assert!(landmarks(&s).is_err());
    }

    #[test]
    fn refinements_are_new_and_in_range() {
        let space = SearchSpace::new([16, 64], 50);
        let marks = landmarks(&space).unwrap();
        for best in &marks {
            let r = refinements(&space, best, &marks);
            assert!(!r.is_empty());
            for c in &r {
                assert!(!marks.iter().any(|m| m.key() == c.key()));
                assert!((3..=6).contains(&c.cells_per_block));
                assert!((16..=64).contains(&c.hidden_channels));
                assert!(c.lr >= 1e-3 && c.lr <= 1e-2);
            }
        }
    }

    #[test]
    fn memory_estimate_grows_with_width() {
        let a = estimate_memory_bytes(&TcnHyperParams::new(2, 6, 128, 500), 8);
        let b = estimate_memory_bytes(&TcnHyperParams::new(2, 6, 256, 500), 8);
        assert!(b > a);
        assert!(b > 2 << 30);
    }
}
