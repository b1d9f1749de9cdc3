//! Error types for the analysis, oracle and simulation layers.

use crate::network::FlowId;
use thiserror::Error;

/// Rejections raised while validating a raw [`crate::network::NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    /// Row `row` of the routing matrix sums to more than one.
    #[error("routing matrix row {row} sums to {sum} > 1")]
    RowSumExceedsOne { row: usize, sum: f64 },
    /// The routing matrix keeps jobs circulating forever; the network is not open.
    #[error("routing matrix has spectral radius >= 1; the network is not open")]
    SpectralRadiusGEOne,
    /// A field holds a negative entry where only nonnegative values make sense.
    #[error("{field}[{index}] = {value} is negative")]
    NegativeEntry {
        field: &'static str,
        index: String,
        value: f64,
    },
    /// A rate that must be strictly positive is zero or negative.
    #[error("{field}[{index}] = {value} must be strictly positive")]
    NonPositiveEntry {
        field: &'static str,
        index: String,
        value: f64,
    },
    /// Vector or matrix dimensions disagree with the declared queue count.
    #[error("{field} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    /// Every network needs at least one exogenous arrival stream.
    #[error("alpha has no strictly positive entry; nothing ever arrives")]
    NoPositiveArrival,
    /// Server groups must form a partition of the queues.
    #[error("queue {queue} appears in more than one server group")]
    QueueServedTwice { queue: usize },
    /// A server group references a queue outside 1..=K.
    #[error("server group references queue {queue}, but K = {k}")]
    QueueIndexOutOfRange { queue: usize, k: usize },
    /// A priority list must be a permutation of its group's queues.
    #[error("priority list for server {server} is not a permutation of its queues")]
    BadPriorityList { server: usize },
}

/// Failures of the analytic covariance operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    /// The squared coefficient of variation is undefined when the throughput is zero.
    #[error("scv undefined for queue {queue}: throughput is zero")]
    UndefinedForZeroRate { queue: usize },
    /// A correlation coefficient is undefined when a flow has zero asymptotic variance.
    #[error("correlation undefined: flow {flow} has zero asymptotic variance")]
    UndefinedForZeroVarianceFlow { flow: FlowId },
    /// Flow index outside the K*K flow space.
    #[error("flow {flow} out of range for K = {k}")]
    FlowOutOfRange { flow: FlowId, k: usize },
    /// Queue index outside 1..=K.
    #[error("queue {queue} out of range for K = {k}")]
    QueueOutOfRange { queue: usize, k: usize },
}

/// Failures of the zero-service Monte-Carlo oracle.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    /// A routing tour ran past the configured step cap, which signals a
    /// near-critical routing matrix.
    #[error("tour exceeded {cap} steps without absorption (start node {start})")]
    TourLengthExceeded { start: usize, cap: u64 },
}

/// Failures of the discrete-event simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    /// The network is not stable under the configured server partition and the
    /// caller did not force the run.
    #[error("server {server} has load {load} >= 1; refusing to simulate (pass force to override)")]
    UnstableRefused { server: usize, load: f64 },
    /// The event loop processed more events than the configured cap.
    #[error("replication exceeded the event cap of {cap} events")]
    EventQueueOverflow { cap: u64 },
    /// An integer conservation identity failed inside a replication. This is a
    /// bug, never a data error.
    #[error("conservation identity violated at t={t} (queue {queue}): {detail}")]
    ConservationViolated {
        t: f64,
        queue: usize,
        detail: String,
    },
    /// Invalid experiment configuration (bad grid, zero replications, ...).
    #[error("invalid experiment configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Problems reading a spec or experiment file.
#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// Parse errors carry the JSON path of the offending field plus the
    /// line/column reported by the parser.
    #[error("{path}: invalid {what} at {field} ({detail})")]
    Malformed {
        path: String,
        what: &'static str,
        field: String,
        detail: String,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: String,
        source: ValidationError,
    },
}
