//! Fixed keep-alive and the forecast-driven ensemble policy.
//!
//! Path A turns a forecast window into per-function demand and asks for
//! function-agnostic shell nodes to cover the deficit. Path B plans when each
//! shell gets bound to a function so the node is warm by the predicted
//! arrival, and decommissions idle capacity nothing in the lookahead needs.
//! Below the confidence floor, or when the forecast fails, the ensemble emits
//! nothing and the pool behaves exactly like fixed keep-alive.

mod forecast;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::{NodeState, NodeView, PoolSnapshot};
use crate::trace::ArrivalDataset;

pub use forecast::{FaultyForecasts, ForecastProvider, ForecastWindow, ModelForecasts, OracleForecasts, RecordedForecasts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("forecast unavailable: {0}")]
    Forecast(String),
    #[error("invalid policy config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionKind {
    ProvisionShell { count: usize },
    BindShellToFunction { func_id: u32 },
    ExtendKeepAlive { node_id: usize, minutes: f64 },
    Decommission { node_id: usize },
    /// Warm nodes ordered for reuse; informational.
    RankResources { order: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAction {
    pub issue_time: f64,
    #[serde(flatten)]
    pub kind: ActionKind,
}

impl PolicyAction {
    pub fn now(t: f64, kind: ActionKind) -> Self {
        Self { issue_time: t, kind }
    }
}

pub trait Policy {
    fn name(&self) -> String;
    /// Tick cadence, or `None` for a passive policy.
    fn tick_minutes(&self) -> Option<f64>;
    fn on_tick(&mut self, snap: &PoolSnapshot) -> Vec<PolicyAction>;
    /// Diagnostics collected during the run.
    fn flags(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Scale-per-request with a fixed keep-alive; the simulator enforces the
/// keep-alive itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedKeepAlive {
    pub keepalive_minutes: Option<f64>,
}

pub fn fixed_keepalive_policy(keepalive_minutes: Option<f64>) -> FixedKeepAlive {
    FixedKeepAlive { keepalive_minutes }
}

impl Policy for FixedKeepAlive {
    fn name(&self) -> String {
        match self.keepalive_minutes {
            Some(k) => format!("fixed-keepalive-{k}"),
            None => "fixed-keepalive-unbounded".into(),
        }
    }
    fn tick_minutes(&self) -> Option<f64> {
        None
    }
    fn on_tick(&mut self, _snap: &PoolSnapshot) -> Vec<PolicyAction> {
        Vec::new()
    }
}

/// Per-function execution time and bind latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirements {
    pub exec_minutes: Vec<f64>,
    pub bind_minutes: Vec<f64>,
}

impl Requirements {
    /// Mean execution time per function from the trace; uniform bind latency.
    pub fn from_dataset(ds: &ArrivalDataset, bind_latency: f64) -> Self {
        let v = ds.vocab_size();
        let (mut sum, mut n) = (vec![0.0; v], vec![0usize; v]);
        for r in ds.records() {
            sum[r.func_id as usize] += crate::simulator::exec_minutes(r.avg_exec_ms);
            n[r.func_id as usize] += 1;
        }
        Self {
            exec_minutes: sum.iter().zip(&n).map(|(s, &k)| if k == 0 { 0.0 } else { s / k as f64 }).collect(),
            bind_minutes: vec![bind_latency; v],
        }
    }

    fn exec(&self, f: u32) -> f64 {
        self.exec_minutes.get(f as usize).copied().unwrap_or(0.0)
    }

    fn bind(&self, f: u32, default: f64) -> f64 {
        self.bind_minutes.get(f as usize).copied().unwrap_or(default)
    }
}

/// Path A output.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandEstimate {
    /// Predicted arrivals inside the lookahead, `(minute, function)`, sorted.
    pub arrivals: Vec<(f64, u32)>,
    pub per_function: BTreeMap<u32, usize>,
    pub deficit: usize,
    pub confidence: f64,
    /// Warm-idle nodes, longest idle first.
    pub ranking: Vec<usize>,
}

/// Path A: demand per function in `[now, now + lookahead]` against warm,
/// starting and spare shell capacity.
pub fn path_a_infer(window: &ForecastWindow, snap: &PoolSnapshot, lookahead: f64, confidence: f64) -> (DemandEstimate, Vec<PolicyAction>) {
    let now = snap.now;
    let mut arrivals: Vec<(f64, u32)> = window
        .arrivals
        .iter()
        .copied()
        .filter(|&(t, f)| t >= now && t <= now + lookahead && (f as usize) < snap.vocab_size)
        .collect();
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut per_function = BTreeMap::new();
    for &(_, f) in &arrivals {
        *per_function.entry(f).or_insert(0usize) += 1;
    }
    let mut deficit = 0;
    for (&f, &need) in &per_function {
        let have = snap
            .nodes
            .iter()
            .filter(|n| n.func_id == Some(f) && matches!(n.state, NodeState::WarmIdle | NodeState::Provisioning))
            .count();
        deficit += need.saturating_sub(have);
    }
    let spare_shells = snap.nodes.iter().filter(|n| n.func_id.is_none()).count();
    let deficit = deficit.saturating_sub(spare_shells);
    let mut idle: Vec<&NodeView> = snap.nodes.iter().filter(|n| n.state == NodeState::WarmIdle).collect();
    idle.sort_by(|a, b| a.state_since.total_cmp(&b.state_since).then(a.node_id.cmp(&b.node_id)));
    let ranking: Vec<usize> = idle.iter().map(|n| n.node_id).collect();
    let action = if deficit > 0 {
        ActionKind::ProvisionShell { count: deficit }
    } else {
        ActionKind::RankResources { order: ranking.clone() }
    };
    (
        DemandEstimate {
            arrivals,
            per_function,
            deficit,
            confidence,
            ranking,
        },
        vec![PolicyAction::now(now, action)],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedBind {
    pub func_id: u32,
    pub arrival: f64,
    /// When the bind has to start: arrival minus the function's bind latency.
    pub start: f64,
    /// A shell is ready by `start`.
    pub feasible: bool,
}

/// Path B output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BindingPlan {
    pub binds: Vec<PlannedBind>,
    /// Predicted arrivals left without any node or shell.
    pub shortfall: usize,
    pub decommission: Vec<usize>,
}

impl BindingPlan {
    /// Arrivals the plan expects to be cold.
    pub fn predicted_cold(&self) -> usize {
        self.shortfall + self.binds.iter().filter(|b| !b.feasible).count()
    }
}

/// Path B: concurrency-aware binding. Arrivals are served in order of
/// required start (arrival minus lead); each first reuses a node of its
/// function that is free in time, else claims a shell.
pub fn path_b_schedule(demand: &DemandEstimate, snap: &PoolSnapshot, req: &Requirements) -> BindingPlan {
    let now = snap.now;
    let mut order: Vec<(f64, f64, u32)> = demand
        .arrivals
        .iter()
        .map(|&(a, f)| (a - req.bind(f, snap.bind_latency), a, f))
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2)));

    // (node, free_at, claimed)
    let mut fnodes: Vec<(usize, Option<u32>, f64, bool)> = snap
        .nodes
        .iter()
        .filter(|n| n.state != NodeState::Expired)
        .map(|n| (n.node_id, n.func_id, n.free_at, false))
        .collect();
    let mut shells: Vec<(usize, f64, bool)> = Vec::new();
    fnodes.retain(|&(id, f, free, _)| {
        if f.is_none() {
            shells.push((id, free, false));
            false
        } else {
            true
        }
    });
    shells.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut plan = BindingPlan::default();
    // binds planned in this pass act as nodes for later arrivals
    let mut planned: Vec<(u32, f64)> = Vec::new();
    for (start, a, f) in order {
        // latest-free node that still makes it
        let reuse = fnodes
            .iter_mut()
            .filter(|n| n.1 == Some(f) && n.2 <= a)
            .max_by(|x, y| x.2.total_cmp(&y.2).then(y.0.cmp(&x.0)));
        if let Some(n) = reuse {
            n.2 = a + req.exec(f);
            n.3 = true;
            continue;
        }
        if let Some(p) = planned.iter_mut().filter(|p| p.0 == f && p.1 <= a).max_by(|x, y| x.1.total_cmp(&y.1)) {
            p.1 = a + req.exec(f);
            continue;
        }
        let shell = shells.iter_mut().find(|s| !s.2 && s.1 <= start.max(now));
        let feasible = match shell {
            Some(s) => {
                s.2 = true;
                true
            }
            None => match shells.iter_mut().find(|s| !s.2) {
                Some(s) => {
                    s.2 = true;
                    false
                }
                None => {
                    plan.shortfall += 1;
                    continue;
                }
            },
        };
        planned.push((f, a + req.exec(f)));
        plan.binds.push(PlannedBind {
            func_id: f,
            arrival: a,
            start,
            feasible,
        });
    }
    for (id, _, _, claimed) in &fnodes {
        let idle = snap.nodes.iter().any(|n| n.node_id == *id && n.state == NodeState::WarmIdle);
        if idle && !claimed {
            plan.decommission.push(*id);
        }
    }
    for (id, _, claimed) in &shells {
        let idle = snap.nodes.iter().any(|n| n.node_id == *id && n.state == NodeState::WarmIdle);
        if idle && !claimed {
            plan.decommission.push(*id);
        }
    }
    plan.decommission.sort_unstable();
    plan
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Windows whose confidence is below this defer to keep-alive; `None`
    /// means the floor is unreachable.
    pub confidence_floor: Option<f64>,
    /// Defaults to cold start + bind latency + one tick.
    #[serde(default)]
    pub lookahead_minutes: Option<f64>,
    /// Decommission idle capacity the plan does not need.
    #[serde(default = "yes")]
    pub decommission: bool,
}

fn yes() -> bool {
    true
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            confidence_floor: Some(0.5),
            lookahead_minutes: None,
            decommission: true,
        }
    }
}

pub struct EnsemblePolicy {
    cfg: EnsembleConfig,
    provider: Box<dyn ForecastProvider>,
    req: Requirements,
    tick: f64,
    fallback_windows: usize,
    failures: Vec<String>,
    stale_windows: usize,
    planned_cold: usize,
}

/// Ensemble over a forecast provider.
pub fn ensemble_policy(
    provider: Box<dyn ForecastProvider>,
    req: Requirements,
    cfg: EnsembleConfig,
    tick_minutes: f64,
) -> Result<EnsemblePolicy, PolicyError> {
    if cfg.confidence_floor.is_some_and(|c| c.is_nan()) {
        return Err(PolicyError::Config("confidence floor is NaN".into()));
    }
    if cfg.lookahead_minutes.is_some_and(|l| !(l.is_finite() && l > 0.0)) {
        return Err(PolicyError::Config("lookahead must be > 0".into()));
    }
    if !(tick_minutes.is_finite() && tick_minutes > 0.0) {
        return Err(PolicyError::Config("tick must be > 0".into()));
    }
    Ok(EnsemblePolicy {
        cfg,
        provider,
        req,
        tick: tick_minutes,
        fallback_windows: 0,
        failures: Vec::new(),
        stale_windows: 0,
        planned_cold: 0,
    })
}

impl EnsemblePolicy {
    pub fn fallback_windows(&self) -> usize {
        self.fallback_windows
    }

    fn lookahead(&self, snap: &PoolSnapshot) -> f64 {
        self.cfg
            .lookahead_minutes
            .unwrap_or(snap.cold_start_minutes + snap.bind_latency + snap.tick_minutes)
    }
}

impl Policy for EnsemblePolicy {
    fn name(&self) -> String {
        format!("ensemble-{}", self.provider.name())
    }

    fn tick_minutes(&self) -> Option<f64> {
        Some(self.tick)
    }

    fn on_tick(&mut self, snap: &PoolSnapshot) -> Vec<PolicyAction> {
        let confidence = self.provider.confidence();
        let floor = self.cfg.confidence_floor.unwrap_or(f64::INFINITY);
        if confidence.is_nan() || confidence < floor {
            self.fallback_windows += 1;
            return Vec::new();
        }
        let window = match self.provider.window(snap.now) {
            Ok(Some(w)) => w,
            Ok(None) => {
                self.stale_windows += 1;
                self.fallback_windows += 1;
                return Vec::new();
            }
            Err(e) => {
                self.failures.push(format!("t={}: {e}", snap.now));
                self.fallback_windows += 1;
                return Vec::new();
            }
        };
        let lookahead = self.lookahead(snap);
        let (demand, mut actions) = path_a_infer(&window, snap, lookahead, confidence);
        // shells requested this tick are ready after a cold start
        let mut view = snap.clone();
        for i in 0..demand.deficit {
            view.nodes.push(NodeView {
                node_id: usize::MAX - i,
                func_id: None,
                state: NodeState::Provisioning,
                state_since: snap.now,
                free_at: snap.now + snap.cold_start_minutes,
            });
        }
        let plan = path_b_schedule(&demand, &view, &self.req);
        self.planned_cold += plan.predicted_cold();
        for b in plan.binds.iter().filter(|b| b.feasible) {
            // later binds are re-planned on the next tick
            if b.start < snap.now + snap.tick_minutes {
                actions.push(PolicyAction {
                    issue_time: b.start.max(snap.now),
                    kind: ActionKind::BindShellToFunction { func_id: b.func_id },
                });
            }
        }
        if self.cfg.decommission {
            for &id in &plan.decommission {
                actions.push(PolicyAction::now(snap.now, ActionKind::Decommission { node_id: id }));
            }
        }
        actions
    }

    fn flags(&self) -> Vec<String> {
        let mut v = vec![format!("fallback_windows={}", self.fallback_windows)];
        if self.stale_windows > 0 {
            v.push(format!("stale_windows={}", self.stale_windows));
        }
        v.push(format!("planned_cold={}", self.planned_cold));
        v.extend(self.failures.iter().map(|f| format!("forecast_failure {f}")));
        v
    }
}
