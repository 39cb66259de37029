//! Failure kinds, exit codes and the structured error log.

use std::fmt;
use std::io::Write;
use std::path::Path;

use coldlab_core::policy::PolicyError;
use coldlab_core::simulator::SimError;
use coldlab_core::tcn::TcnError;
use coldlab_core::trace::TraceError;
use coldlab_core::training::TrainError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Config,
    Data,
    Budget,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Budget => 4,
            Kind::Internal => 5,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn msg(kind: Kind, msg: impl fmt::Display) -> Self {
        Self {
            kind,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn internal(e: impl Into<anyhow::Error>) -> Self {
        Self::new(Kind::Internal, e)
    }

    pub fn context(self, c: impl fmt::Display) -> Self {
        Self {
            kind: self.kind,
            error: self.error.context(c.to_string()),
        }
    }

    /// Appends one JSON line to `<out>/errors.jsonl`. Best effort.
    pub fn log(&self, out: &Path, command: &str) {
        #[derive(Serialize)]
        struct Entry<'a> {
            command: &'a str,
            kind: Kind,
            exit_code: u8,
            message: String,
            chain: Vec<String>,
        }
        let entry = Entry {
            command,
            kind: self.kind,
            exit_code: self.kind.exit_code(),
            message: format!("{:#}", self.error),
            chain: self.error.chain().map(|e| e.to_string()).collect(),
        };
        let _ = std::fs::create_dir_all(out);
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(out.join("errors.jsonl")) {
            if let Ok(line) = serde_json::to_string(&entry) {
                let _ = writeln!(f, "{line}");
            }
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} error: {:#}", self.kind, self.error)
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        let kind = match e {
            TraceError::InvalidConfig(_) => Kind::Config,
            _ => Kind::Data,
        };
        Self::new(kind, e)
    }
}

impl From<TcnError> for Failure {
    fn from(e: TcnError) -> Self {
        let kind = match e {
            TcnError::HyperParams(_) | TcnError::ChannelChain(_) | TcnError::ShortContext { .. } => Kind::Config,
            TcnError::EmptyDataset | TcnError::Checkpoint(_) => Kind::Data,
            _ => Kind::Internal,
        };
        Self::new(kind, e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let kind = match e {
            TrainError::TooSmall { .. } => Kind::Data,
            TrainError::Config(_) => Kind::Config,
            TrainError::Tcn(t) => return t.into(),
            _ => Kind::Internal,
        };
        Self::new(kind, e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Self::new(Kind::Config, e)
    }
}

impl From<PolicyError> for Failure {
    fn from(e: PolicyError) -> Self {
        let kind = match e {
            PolicyError::Config(_) => Kind::Config,
            PolicyError::Forecast(_) => Kind::Internal,
        };
        Self::new(kind, e)
    }
}

impl From<coldlab_core::Error> for Failure {
    fn from(e: coldlab_core::Error) -> Self {
        use coldlab_core::Error as E;
        match e {
            E::Trace(t) => t.into(),
            E::Tcn(t) => t.into(),
            E::Train(t) => t.into(),
            E::Sim(t) => t.into(),
            E::Policy(t) => t.into(),
            other => Self::internal(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::internal(e)
    }
}

pub type CliResult<T> = Result<T, Failure>;
