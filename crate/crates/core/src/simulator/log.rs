//! Newline-delimited JSON event log.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::NodeState;
use crate::policy::PolicyAction;

pub const EVENT_LOG_SCHEMA: &str = "coldlab.sim.events";
pub const EVENT_LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Warm,
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        schema: String,
        version: u32,
    },
    Spawn {
        t: f64,
        node: usize,
        func: Option<u32>,
    },
    State {
        t: f64,
        node: usize,
        func: Option<u32>,
        from: NodeState,
        to: NodeState,
    },
    Arrival {
        t: f64,
        record: usize,
        func: u32,
        outcome: Outcome,
        node: usize,
        latency: f64,
    },
    Action {
        t: f64,
        action: PolicyAction,
        applied: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        reason: Option<String>,
    },
    End {
        t: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        Self {
            records: vec![LogRecord::Header {
                schema: EVENT_LOG_SCHEMA.into(),
                version: EVENT_LOG_VERSION,
            }],
        }
    }

    pub(crate) fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses a log, checking the header first.
    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self, String> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            records.push(rec);
        }
        match records.first() {
            Some(LogRecord::Header { schema, version }) if schema == EVENT_LOG_SCHEMA && *version == EVENT_LOG_VERSION => {
                Ok(Self { records })
            }
            Some(LogRecord::Header { schema, version }) => Err(format!("unsupported log {schema} v{version}")),
            _ => Err("missing log header".into()),
        }
    }
}

/// Warm-idle minutes rebuilt from state transitions alone: function nodes
/// and shells separately.
pub fn recompute_warm_idle(log: &EventLog) -> (f64, f64) {
    let mut since: HashMap<usize, f64> = HashMap::new();
    let (mut func, mut shell) = (0.0, 0.0);
    for r in log.records() {
        if let LogRecord::State { t, node, func: f, from, to } = r {
            if *from == NodeState::WarmIdle {
                let d = t - since.remove(node).unwrap_or(*t);
                if f.is_some() {
                    func += d;
                } else {
                    shell += d;
                }
            }
            if *to == NodeState::WarmIdle {
                since.insert(*node, *t);
            }
        }
    }
    (func, shell)
}
