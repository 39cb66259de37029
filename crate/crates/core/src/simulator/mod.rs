//! Discrete-event simulation of a function-specific worker pool under
//! scale-per-request autoscaling.
//!
//! An arrival binds to the most recently idled warm node of its function
//! (lowest id on ties). Without one the request is cold: it attaches to a
//! pre-provisioned node still starting up, else binds an idle shell (bind
//! latency), else provisions a fresh node (`cold_start_minutes`). Idle nodes
//! expire after the keep-alive; a node idle for exactly the keep-alive has
//! expired by the time a simultaneous arrival is handled.
//!
//! Events at equal times are processed in kind order: execution complete,
//! provision complete, keep-alive expiry, policy tick/action, arrival; then
//! by insertion sequence.

mod log;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{ActionKind, Policy, PolicyAction};
use crate::trace::ArrivalDataset;

pub use log::{recompute_warm_idle, EventLog, LogRecord, Outcome, EVENT_LOG_SCHEMA};

pub const SIM_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_cold")]
    pub cold_start_minutes: f64,
    /// `None` keeps idle nodes forever.
    pub keepalive_minutes: Option<f64>,
    #[serde(default = "default_tick")]
    pub tick_minutes: f64,
    /// Shell bind latency as a fraction of the cold start.
    #[serde(default = "default_bind")]
    pub bind_fraction: f64,
    /// Idle shells expire after this long.
    #[serde(default = "default_shell_keepalive")]
    pub shell_keepalive_minutes: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_cold() -> f64 {
    0.5
}
fn default_tick() -> f64 {
    1.0
}
fn default_bind() -> f64 {
    0.2
}
fn default_shell_keepalive() -> f64 {
    10.0
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cold_start_minutes: default_cold(),
            keepalive_minutes: Some(10.0),
            tick_minutes: default_tick(),
            bind_fraction: default_bind(),
            shell_keepalive_minutes: default_shell_keepalive(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn with_keepalive(keepalive: Option<f64>) -> Self {
        Self {
            keepalive_minutes: keepalive,
            ..Self::default()
        }
    }

    pub fn keepalive(&self) -> f64 {
        self.keepalive_minutes.unwrap_or(f64::INFINITY)
    }

    pub fn bind_latency(&self) -> f64 {
        self.cold_start_minutes * self.bind_fraction
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.check().map_err(SimError::Config)
    }

    fn check(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.cold_start_minutes) {
            return Err("cold_start_minutes must be finite and >= 0".into());
        }
        if self.keepalive_minutes.is_some_and(|k| !ok(k)) {
            return Err("keepalive_minutes must be finite and >= 0 (omit for unbounded)".into());
        }
        if !(self.tick_minutes.is_finite() && self.tick_minutes > 0.0) {
            return Err("tick_minutes must be > 0".into());
        }
        if !ok(self.bind_fraction) || !ok(self.shell_keepalive_minutes) {
            return Err("bind_fraction and shell_keepalive_minutes must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Provisioning,
    WarmIdle,
    Busy,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Request {
    record: usize,
    arrival: f64,
    exec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerNode {
    pub node_id: usize,
    /// `None` for an unbound shell.
    pub func_id: Option<u32>,
    pub state: NodeState,
    pub state_since: f64,
    ready_at: f64,
    busy_until: f64,
    generation: u64,
    keepalive: f64,
    pending: Option<Request>,
}

/// Read-only view of one node handed to policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub node_id: usize,
    pub func_id: Option<u32>,
    pub state: NodeState,
    pub state_since: f64,
    /// Earliest time the node can take a new request.
    pub free_at: f64,
}

/// Pool state at a policy tick.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolSnapshot {
    pub now: f64,
    pub tick_minutes: f64,
    pub cold_start_minutes: f64,
    pub bind_latency: f64,
    pub vocab_size: usize,
    pub nodes: Vec<NodeView>,
}

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    ExecutionComplete { node: usize },
    ProvisionComplete { node: usize },
    KeepAliveExpiry { node: usize, generation: u64 },
    PolicyTick,
    PolicyAction(PolicyAction),
    Arrival { record: usize },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::ExecutionComplete { .. } => 0,
            EventKind::ProvisionComplete { .. } => 1,
            EventKind::KeepAliveExpiry { .. } => 2,
            EventKind::PolicyTick | EventKind::PolicyAction(_) => 3,
            EventKind::Arrival { .. } => 4,
        }
    }
}

#[derive(Debug)]
struct Queued {
    time: f64,
    rank: u8,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.rank.cmp(&self.rank))
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionStats {
    pub func_id: u32,
    pub arrivals: usize,
    pub cold: usize,
    pub warm: usize,
    pub warm_idle_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub arrivals_total: usize,
    pub cold_count: usize,
    pub warm_count: usize,
    pub cold_fraction: f64,
    /// Idle minutes of function nodes and shells together.
    pub warm_idle_node_minutes: f64,
    /// Share of `warm_idle_node_minutes` spent by unbound shells.
    pub shell_idle_node_minutes: f64,
    pub mean_latency_minutes: f64,
    pub p95_latency_minutes: f64,
    pub nodes_provisioned: usize,
    pub shells_provisioned: usize,
    pub actions_applied: usize,
    pub actions_rejected: usize,
    pub per_function: Vec<FunctionStats>,
}

/// Report, event log and policy diagnostics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub report: SimReport,
    pub log: EventLog,
    pub policy_flags: Vec<String>,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    ds: &'a ArrivalDataset,
    nodes: Vec<WorkerNode>,
    queue: BinaryHeap<Queued>,
    seq: u64,
    now: f64,
    last_activity: f64,
    log: EventLog,
    stats: Vec<FunctionStats>,
    latencies: Vec<f64>,
    shell_idle: f64,
    shells_provisioned: usize,
    applied: usize,
    rejected: usize,
}

/// Minutes of execution for a record.
pub fn exec_minutes(avg_exec_ms: f64) -> f64 {
    avg_exec_ms / 60_000.0
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Queued {
            time,
            rank: kind.rank(),
            seq: self.seq,
            kind,
        });
    }

    fn transition(&mut self, id: usize, to: NodeState) {
        let now = self.now;
        let node = &mut self.nodes[id];
        let from = node.state;
        if from == NodeState::WarmIdle {
            let idle = now - node.state_since;
            match node.func_id {
                Some(f) => self.stats[f as usize].warm_idle_minutes += idle,
                None => self.shell_idle += idle,
            }
        }
        node.state = to;
        node.state_since = now;
        self.log.push(LogRecord::State {
            t: now,
            node: id,
            func: node.func_id,
            from,
            to,
        });
    }

    fn new_node(&mut self, func: Option<u32>, ready_at: f64, keepalive: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(WorkerNode {
            node_id: id,
            func_id: func,
            state: NodeState::Provisioning,
            state_since: self.now,
            ready_at,
            busy_until: f64::NAN,
            generation: 0,
            keepalive,
            pending: None,
        });
        self.log.push(LogRecord::Spawn {
            t: self.now,
            node: id,
            func,
        });
        self.push(ready_at, EventKind::ProvisionComplete { node: id });
        id
    }

    fn start_busy(&mut self, id: usize, req: Request) {
        self.transition(id, NodeState::Busy);
        let end = self.now + req.exec;
        self.nodes[id].busy_until = end;
        self.push(end, EventKind::ExecutionComplete { node: id });
    }

    fn go_idle(&mut self, id: usize) {
        self.transition(id, NodeState::WarmIdle);
        let node = &mut self.nodes[id];
        node.generation += 1;
        let ka = node.keepalive;
        let g = node.generation;
        if ka.is_finite() {
            self.push(self.now + ka, EventKind::KeepAliveExpiry { node: id, generation: g });
        }
    }

    fn idle_shell(&self) -> Option<usize> {
        self.nodes
            .iter()
            .find(|n| n.func_id.is_none() && n.state == NodeState::WarmIdle)
            .map(|n| n.node_id)
    }

    fn bind_shell(&mut self, id: usize, f: u32) {
        self.transition(id, NodeState::Provisioning);
        let ready = self.now + self.cfg.bind_latency();
        let node = &mut self.nodes[id];
        node.func_id = Some(f);
        node.keepalive = self.cfg.keepalive();
        node.ready_at = ready;
        node.generation += 1;
        self.push(ready, EventKind::ProvisionComplete { node: id });
    }

    fn arrival(&mut self, record: usize) {
        let r = &self.ds.records()[record];
        let f = r.func_id;
        let req = Request {
            record,
            arrival: self.now,
            exec: exec_minutes(r.avg_exec_ms),
        };
        self.stats[f as usize].arrivals += 1;
        let warm = self
            .nodes
            .iter()
            .filter(|n| n.func_id == Some(f) && n.state == NodeState::WarmIdle)
            .max_by(|a, b| a.state_since.total_cmp(&b.state_since).then(b.node_id.cmp(&a.node_id)))
            .map(|n| n.node_id);
        let (outcome, node, latency) = if let Some(id) = warm {
            self.start_busy(id, req);
            (Outcome::Warm, id, 0.0)
        } else if let Some(id) = self
            .nodes
            .iter()
            .find(|n| n.func_id == Some(f) && n.state == NodeState::Provisioning && n.pending.is_none())
            .map(|n| n.node_id)
        {
            self.nodes[id].pending = Some(req);
            (Outcome::Cold, id, self.nodes[id].ready_at - self.now)
        } else if let Some(id) = self.idle_shell() {
            self.bind_shell(id, f);
            self.nodes[id].pending = Some(req);
            (Outcome::Cold, id, self.cfg.bind_latency())
        } else {
            let id = self.new_node(Some(f), self.now + self.cfg.cold_start_minutes, self.cfg.keepalive());
            self.nodes[id].pending = Some(req);
            (Outcome::Cold, id, self.cfg.cold_start_minutes)
        };
        match outcome {
            Outcome::Warm => self.stats[f as usize].warm += 1,
            Outcome::Cold => self.stats[f as usize].cold += 1,
        }
        self.latencies.push(latency);
        self.log.push(LogRecord::Arrival {
            t: self.now,
            record,
            func: f,
            outcome,
            node,
            latency,
        });
    }

    fn provision_complete(&mut self, id: usize) {
        match self.nodes[id].pending.take() {
            Some(req) => {
                // zero-length idle, then straight to work
                self.transition(id, NodeState::WarmIdle);
                self.start_busy(id, req);
            }
            None => self.go_idle(id),
        }
    }

    fn apply(&mut self, action: PolicyAction) {
        let result: Result<(), String> = match &action.kind {
            ActionKind::ProvisionShell { count } => {
                if *count == 0 {
                    Err("shell count must be >= 1".into())
                } else {
                    for _ in 0..*count {
                        let ready = self.now + self.cfg.cold_start_minutes;
                        self.new_node(None, ready, self.cfg.shell_keepalive_minutes);
                    }
                    self.shells_provisioned += count;
                    Ok(())
                }
            }
            ActionKind::BindShellToFunction { func_id } => {
                if *func_id as usize >= self.ds.vocab_size() {
                    Err(format!("unknown function {func_id}"))
                } else if let Some(id) = self.idle_shell() {
                    self.bind_shell(id, *func_id);
                    Ok(())
                } else {
                    Err("no idle shell".into())
                }
            }
            ActionKind::ExtendKeepAlive { node_id, minutes } => match self.nodes.get(*node_id) {
                None => Err(format!("unknown node {node_id}")),
                Some(n) if n.state == NodeState::Expired => Err(format!("node {node_id} expired")),
                Some(_) if !(minutes.is_finite() && *minutes >= 0.0) => Err("extension must be finite".into()),
                Some(_) => {
                    let n = &mut self.nodes[*node_id];
                    n.keepalive += minutes;
                    if n.state == NodeState::WarmIdle && n.keepalive.is_finite() {
                        n.generation += 1;
                        let (t, g) = (n.state_since + n.keepalive, n.generation);
                        self.push(t.max(self.now), EventKind::KeepAliveExpiry { node: *node_id, generation: g });
                    }
                    Ok(())
                }
            },
            ActionKind::Decommission { node_id } => match self.nodes.get(*node_id).map(|n| n.state) {
                None => Err(format!("unknown node {node_id}")),
                Some(NodeState::WarmIdle) => {
                    self.transition(*node_id, NodeState::Expired);
                    Ok(())
                }
                Some(s) => Err(format!("node {node_id} is {s:?}")),
            },
            ActionKind::RankResources { .. } => Ok(()),
        };
        let (applied, reason) = match result {
            Ok(()) => {
                self.applied += 1;
                (true, None)
            }
            Err(e) => {
                self.rejected += 1;
                (false, Some(e))
            }
        };
        self.log.push(LogRecord::Action {
            t: self.now,
            action,
            applied,
            reason,
        });
    }

    fn snapshot(&self) -> PoolSnapshot {
        PoolSnapshot {
            now: self.now,
            tick_minutes: self.cfg.tick_minutes,
            cold_start_minutes: self.cfg.cold_start_minutes,
            bind_latency: self.cfg.bind_latency(),
            vocab_size: self.ds.vocab_size(),
            nodes: self
                .nodes
                .iter()
                .filter(|n| n.state != NodeState::Expired)
                .map(|n| NodeView {
                    node_id: n.node_id,
                    func_id: n.func_id,
                    state: n.state,
                    state_since: n.state_since,
                    free_at: match n.state {
                        NodeState::WarmIdle => self.now,
                        NodeState::Busy => n.busy_until,
                        NodeState::Provisioning => n.ready_at + n.pending.map_or(0.0, |r| r.exec),
                        NodeState::Expired => f64::INFINITY,
                    },
                })
                .collect(),
        }
    }
}

/// Runs `policy` over the arrivals of `ds`.
pub fn run(ds: &ArrivalDataset, cfg: &SimConfig, policy: &mut dyn Policy) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    let mut sim = Sim {
        cfg,
        ds,
        nodes: Vec::new(),
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        last_activity: 0.0,
        log: EventLog::new(),
        stats: (0..ds.vocab_size())
            .map(|f| FunctionStats {
                func_id: f as u32,
                ..FunctionStats::default()
            })
            .collect(),
        latencies: Vec::with_capacity(ds.len()),
        shell_idle: 0.0,
        shells_provisioned: 0,
        applied: 0,
        rejected: 0,
    };
    for (i, r) in ds.records().iter().enumerate() {
        sim.push(r.arrival_minute as f64, EventKind::Arrival { record: i });
    }
    let last_arrival = ds.records().last().map(|r| r.arrival_minute as f64);
    let tick = policy.tick_minutes().map(|t| t.min(cfg.tick_minutes));
    if let (Some(_), Some(_)) = (tick, last_arrival) {
        sim.push(0.0, EventKind::PolicyTick);
    }

    while let Some(ev) = sim.queue.pop() {
        sim.now = ev.time;
        match ev.kind {
            EventKind::Arrival { record } => {
                sim.last_activity = sim.last_activity.max(sim.now);
                sim.arrival(record);
            }
            EventKind::ProvisionComplete { node } => {
                sim.last_activity = sim.last_activity.max(sim.now);
                sim.provision_complete(node);
            }
            EventKind::ExecutionComplete { node } => {
                sim.last_activity = sim.last_activity.max(sim.now);
                sim.go_idle(node);
            }
            EventKind::KeepAliveExpiry { node, generation } => {
                let n = &sim.nodes[node];
                if n.generation == generation && n.state == NodeState::WarmIdle {
                    sim.transition(node, NodeState::Expired);
                }
            }
            EventKind::PolicyTick => {
                let snap = sim.snapshot();
                for a in policy.on_tick(&snap) {
                    let t = a.issue_time.max(sim.now);
                    sim.push(t, EventKind::PolicyAction(a));
                }
                let next = sim.now + tick.expect("ticks only scheduled with a cadence");
                if last_arrival.is_some_and(|l| next <= l) {
                    sim.push(next, EventKind::PolicyTick);
                }
            }
            EventKind::PolicyAction(a) => sim.apply(a),
        }
    }

    // unbounded keep-alive: idle intervals end at the last real activity
    let end = sim.last_activity;
    sim.now = end;
    let open: Vec<usize> = sim
        .nodes
        .iter()
        .filter(|n| n.state == NodeState::WarmIdle)
        .map(|n| n.node_id)
        .collect();
    for id in open {
        let since = sim.nodes[id].state_since;
        sim.now = end.max(since);
        sim.transition(id, NodeState::Expired);
    }
    sim.log.push(LogRecord::End { t: end });

    let cold: usize = sim.stats.iter().map(|s| s.cold).sum();
    let warm: usize = sim.stats.iter().map(|s| s.warm).sum();
    let total = cold + warm;
    let fn_idle: f64 = sim.stats.iter().map(|s| s.warm_idle_minutes).sum();
    let mut lat = sim.latencies.clone();
    lat.sort_by(f64::total_cmp);
    let p95 = if lat.is_empty() {
        0.0
    } else {
        lat[((0.95 * lat.len() as f64).ceil() as usize).max(1) - 1]
    };
    let report = SimReport {
        schema_version: SIM_SCHEMA_VERSION,
        arrivals_total: total,
        cold_count: cold,
        warm_count: warm,
        cold_fraction: if total == 0 { 0.0 } else { cold as f64 / total as f64 },
        warm_idle_node_minutes: fn_idle + sim.shell_idle,
        shell_idle_node_minutes: sim.shell_idle,
        mean_latency_minutes: if lat.is_empty() { 0.0 } else { lat.iter().sum::<f64>() / lat.len() as f64 },
        p95_latency_minutes: p95,
        nodes_provisioned: sim.nodes.len() - sim.shells_provisioned,
        shells_provisioned: sim.shells_provisioned,
        actions_applied: sim.applied,
        actions_rejected: sim.rejected,
        per_function: sim.stats,
    };
    Ok(SimOutcome {
        report,
        log: sim.log,
        policy_flags: policy.flags(),
    })
}

/// Fixed keep-alive run with `keepalive` overriding the config.
pub fn run_fixed(ds: &ArrivalDataset, cfg: &SimConfig, keepalive: Option<f64>) -> Result<SimOutcome, SimError> {
    let cfg = SimConfig {
        keepalive_minutes: keepalive,
        ..*cfg
    };
    let mut p = crate::policy::fixed_keepalive_policy(keepalive);
    run(ds, &cfg, &mut p)
}
