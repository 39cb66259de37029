use thiserror::Error;

use crate::baselines::BaselineError;
use crate::metrics::MetricError;
use crate::nn::NnError;
use crate::policy::PolicyError;
use crate::simulator::SimError;
use crate::tcn::TcnError;
use crate::trace::TraceError;
use crate::training::TrainError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Umbrella error for callers that drive several stages at once.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tcn(#[from] TcnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
