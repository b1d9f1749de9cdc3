//! Network specification, validation, throughput and stability diagnostics.
//!
//! A [`NetworkSpec`] describes an open queueing network with Bernoulli
//! routing: `K` queues, a substochastic routing matrix whose row slack
//! routes jobs to the outside, exogenous arrival rates with their
//! asymptotic variance rates, service rates, and an optional partition of
//! the queues into multi-class servers. Every other module consumes the
//! [`ValidatedNetwork`] produced by [`NetworkSpec::validate`].
//!
//! Queue and flow indices are 1-based everywhere in the public interface
//! and in all file formats.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{InputError, ValidationError};

/// An ordered queue pair `i -> j`, identifying one inter-queue flow.
///
/// Indices are 1-based. The canonical position of a flow inside the
/// `K*K`-dimensional flow space is `(i-1)*K + (j-1)` (0-based), i.e. flows
/// are ordered lexicographically with flows to the outside omitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowId {
    pub i: usize,
    pub j: usize,
}

impl FlowId {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    /// 0-based position in the flow vector for a network with `k` queues.
    pub fn index(&self, k: usize) -> usize {
        (self.i - 1) * k + (self.j - 1)
    }

    /// Inverse of [`FlowId::index`].
    pub fn from_index(idx: usize, k: usize) -> Self {
        Self {
            i: idx / k + 1,
            j: idx % k + 1,
        }
    }

    pub fn in_range(&self, k: usize) -> bool {
        (1..=k).contains(&self.i) && (1..=k).contains(&self.j)
    }
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.i, self.j)
    }
}

impl FromStr for FlowId {
    type Err = String;

    /// Accepts `"i->j"` and the shorthand `"i:j"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("->")
            .or_else(|| s.split_once(':'))
            .ok_or_else(|| format!("expected a flow like \"2->1\", got {s:?}"))?;
        let i = a.trim().parse::<usize>().map_err(|e| format!("bad flow {s:?}: {e}"))?;
        let j = b.trim().parse::<usize>().map_err(|e| format!("bad flow {s:?}: {e}"))?;
        if i == 0 || j == 0 {
            return Err(format!("flow indices are 1-based, got {s:?}"));
        }
        Ok(FlowId::new(i, j))
    }
}

/// One server together with the queues it serves, in non-preemptive
/// priority order (first entry is served first whenever it has work).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerGroup {
    /// 1-based queue indices served by this server.
    pub queues: Vec<usize>,
    /// Priority order over `queues`; defaults to the `queues` order.
    #[serde(default)]
    pub priority: Option<Vec<usize>>,
}

impl ServerGroup {
    /// Queues in the order the server polls them.
    pub fn polling_order(&self) -> &[usize] {
        self.priority.as_deref().unwrap_or(&self.queues)
    }
}

/// Raw description of an open queueing network with Bernoulli routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Number of queues.
    #[serde(rename = "K")]
    pub k: usize,
    /// Routing matrix, row-major: `p[i][j]` is the probability a job
    /// finishing at queue `i+1` moves to queue `j+1`. Row slack is the
    /// probability of leaving the network.
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    /// Exogenous arrival rates.
    pub alpha: Vec<f64>,
    /// Asymptotic variance rates of the exogenous arrival processes.
    pub v2: Vec<f64>,
    /// Service rates. Only used by stability checks and the simulator.
    pub mu: Vec<f64>,
    /// Partition of the queues into servers. Empty means one dedicated
    /// server per queue; queues not mentioned in any group also get a
    /// dedicated server.
    #[serde(default)]
    pub servers: Vec<ServerGroup>,
}

impl NetworkSpec {
    /// Convenience constructor for dedicated-server (generalized Jackson)
    /// networks.
    pub fn new(p: Vec<Vec<f64>>, alpha: Vec<f64>, v2: Vec<f64>, mu: Vec<f64>) -> Self {
        Self {
            k: alpha.len(),
            p,
            alpha,
            v2,
            mu,
            servers: Vec::new(),
        }
    }

    /// Read a spec from a JSON file, reporting the offending field on
    /// malformed input.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, InputError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// Parse a spec from JSON text; `origin` names the source in errors.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, InputError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|err| InputError::Malformed {
            path: origin.to_string(),
            what: "network spec",
            field: err.path().to_string(),
            detail: err.inner().to_string(),
        })
    }

    /// Check every invariant and return the validated wrapper.
    pub fn validate(self) -> Result<ValidatedNetwork, ValidationError> {
        ValidatedNetwork::new(self)
    }
}

/// Per-server utilization as reported by [`ValidatedNetwork::stability_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ServerLoad {
    /// Position of the server in [`ValidatedNetwork::servers`].
    pub server: usize,
    /// Queues served, in polling order.
    pub queues: Vec<usize>,
    /// `sum over served queues of nu_k / mu_k`.
    pub load: f64,
    pub stable: bool,
}

/// A [`NetworkSpec`] whose invariants all hold, plus the derived
/// quantities every analysis needs: throughput rates, the fundamental
/// matrix of the routing chain, and cached LU factorizations of `I - P`
/// and `I - P'` for repeated linear solves.
///
/// Immutable once constructed; all queries are safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct ValidatedNetwork {
    spec: NetworkSpec,
    routing: DMatrix<f64>,
    nu: DVector<f64>,
    lu_routing: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_routing_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// `fundamental[(k, i)] = expected visits to queue i+1 for a job
    /// entering at queue k+1`, i.e. the inverse of `I - P`.
    fundamental: DMatrix<f64>,
    servers: Vec<ServerGroup>,
}

/// Relative tolerance of the power-iteration spectral radius test.
const SPECTRAL_TOL: f64 = 1e-12;

impl ValidatedNetwork {
    fn new(spec: NetworkSpec) -> Result<Self, ValidationError> {
        let k = spec.k;
        if spec.p.len() != k {
            return Err(ValidationError::DimensionMismatch {
                field: "P",
                expected: k,
                got: spec.p.len(),
            });
        }
        for (i, row) in spec.p.iter().enumerate() {
            if row.len() != k {
                return Err(ValidationError::DimensionMismatch {
                    field: "P",
                    expected: k,
                    got: row.len(),
                });
            }
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if p.is_nan() || p < 0.0 {
                    return Err(ValidationError::NegativeEntry {
                        field: "P",
                        index: format!("{},{}", i + 1, j + 1),
                        value: p,
                    });
                }
                sum += p;
            }
            if sum > 1.0 + 1e-12 {
                return Err(ValidationError::RowSumExceedsOne { row: i + 1, sum });
            }
        }
        for (field, v) in [("alpha", &spec.alpha), ("v2", &spec.v2), ("mu", &spec.mu)] {
            if v.len() != k {
                return Err(ValidationError::DimensionMismatch {
                    field,
                    expected: k,
                    got: v.len(),
                });
            }
            for (idx, &x) in v.iter().enumerate() {
                if x.is_nan() || x < 0.0 {
                    return Err(ValidationError::NegativeEntry {
                        field,
                        index: (idx + 1).to_string(),
                        value: x,
                    });
                }
            }
        }
        for (idx, &m) in spec.mu.iter().enumerate() {
            if m <= 0.0 {
                return Err(ValidationError::NonPositiveEntry {
                    field: "mu",
                    index: (idx + 1).to_string(),
                    value: m,
                });
            }
        }
        if !spec.alpha.iter().any(|&a| a > 0.0) {
            return Err(ValidationError::NoPositiveArrival);
        }

        let servers = normalize_servers(&spec.servers, k)?;

        let routing = DMatrix::from_fn(k, k, |i, j| spec.p[i][j]);
        if !routing_is_open(&routing) {
            return Err(ValidationError::SpectralRadiusGEOne);
        }

        let eye = DMatrix::<f64>::identity(k, k);
        let lu_routing = (&eye - &routing).lu();
        let lu_routing_t = (&eye - routing.transpose()).lu();
        let fundamental = lu_routing
            .solve(&eye)
            .ok_or(ValidationError::SpectralRadiusGEOne)?;
        let alpha = DVector::from_row_slice(&spec.alpha);
        let nu = lu_routing_t
            .solve(&alpha)
            .ok_or(ValidationError::SpectralRadiusGEOne)?;

        Ok(Self {
            spec,
            routing,
            nu,
            lu_routing,
            lu_routing_t,
            fundamental,
            servers,
        })
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Routing matrix as a dense matrix (0-based indexing).
    pub fn routing(&self) -> &DMatrix<f64> {
        &self.routing
    }

    /// Routing probability for a 1-based queue pair; `j = 0` gives the
    /// exit probability.
    pub fn routing_prob(&self, i: usize, j: usize) -> f64 {
        if j == 0 {
            (1.0 - self.routing.row(i - 1).sum()).max(0.0)
        } else {
            self.routing[(i - 1, j - 1)]
        }
    }

    pub fn alpha(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.spec.alpha)
    }

    pub fn v2(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.spec.v2)
    }

    /// Throughput rates: the unique solution of the traffic equations
    /// `nu = alpha + P' nu`.
    pub fn nu(&self) -> &DVector<f64> {
        &self.nu
    }

    /// Per-flow throughput rates `nu[i] * p[i][j]` (0-based matrix).
    pub fn nu_flow(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i, j| self.nu[i] * self.routing[(i, j)])
    }

    /// Fundamental matrix of the routing chain: entry `(k, i)` (0-based)
    /// is the expected number of visits to queue `i+1` by a job entering
    /// at queue `k+1`, counting the entry itself.
    pub fn fundamental(&self) -> &DMatrix<f64> {
        &self.fundamental
    }

    /// Solve `(I - P) x = b`.
    pub fn solve_routing(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu_routing.solve(b).expect("validated: I - P is invertible")
    }

    /// Solve `(I - P') x = b`.
    pub fn solve_routing_t(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu_routing_t.solve(b).expect("validated: I - P' is invertible")
    }

    /// Solve `(I - P') X = B` for a matrix right-hand side.
    pub fn solve_routing_t_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu_routing_t.solve(b).expect("validated: I - P' is invertible")
    }

    /// Server partition in effect (dedicated servers filled in).
    pub fn servers(&self) -> &[ServerGroup] {
        &self.servers
    }

    /// Replace the server partition, e.g. with the one from an experiment
    /// file. The analytic results do not depend on it.
    pub fn with_servers(mut self, groups: &[ServerGroup]) -> Result<Self, ValidationError> {
        self.servers = normalize_servers(groups, self.k())?;
        Ok(self)
    }

    /// Per-server loads. A load at or above one is reported, not an
    /// error: the analytic formulas still make sense, only the simulator
    /// refuses to run.
    pub fn stability_report(&self) -> Vec<ServerLoad> {
        self.servers
            .iter()
            .enumerate()
            .map(|(s, group)| {
                let load = group
                    .queues
                    .iter()
                    .map(|&q| self.nu[q - 1] / self.spec.mu[q - 1])
                    .sum::<f64>();
                ServerLoad {
                    server: s + 1,
                    queues: group.polling_order().to_vec(),
                    load,
                    stable: load < 1.0,
                }
            })
            .collect()
    }
}

/// Expand a possibly partial list of server groups into a full partition,
/// giving every unmentioned queue its own dedicated server.
fn normalize_servers(
    groups: &[ServerGroup],
    k: usize,
) -> Result<Vec<ServerGroup>, ValidationError> {
    let mut seen = vec![false; k];
    let mut out = Vec::new();
    for (s, group) in groups.iter().enumerate() {
        for &q in &group.queues {
            if q == 0 || q > k {
                return Err(ValidationError::QueueIndexOutOfRange { queue: q, k });
            }
            if seen[q - 1] {
                return Err(ValidationError::QueueServedTwice { queue: q });
            }
            seen[q - 1] = true;
        }
        if let Some(prio) = &group.priority {
            let mut a = prio.clone();
            let mut b = group.queues.clone();
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                return Err(ValidationError::BadPriorityList { server: s + 1 });
            }
        }
        out.push(group.clone());
    }
    for q in 1..=k {
        if !seen[q - 1] {
            out.push(ServerGroup {
                queues: vec![q],
                priority: None,
            });
        }
    }
    Ok(out)
}

/// Decide whether the routing matrix has spectral radius strictly below
/// one. Power iteration on the (nonnegative) matrix with relative
/// tolerance 1e-12 and a hard iteration cap; when the iteration fails to
/// settle (e.g. for routing with periodic structure), fall back to
/// checking that the Neumann series partial sums converge.
fn routing_is_open(p: &DMatrix<f64>) -> bool {
    let k = p.nrows();
    if k == 0 {
        return true;
    }
    let cap = (10.0 * k as f64 * (1.0 / SPECTRAL_TOL).ln()).ceil() as usize;
    let mut v = DVector::from_element(k, 1.0);
    let mut prev = f64::NAN;
    for _ in 0..cap {
        let w = p * &v;
        let norm = w.amax();
        if norm == 0.0 {
            return true; // nilpotent direction: radius 0
        }
        let w = w / norm;
        // The norm ratio estimates the radius only once the direction has
        // settled; periodic routing never settles and falls through to
        // the Neumann check below.
        if (norm - prev).abs() <= SPECTRAL_TOL * norm.max(1.0)
            && (&w - &v).amax() <= SPECTRAL_TOL
        {
            return norm < 1.0;
        }
        prev = norm;
        v = w;
    }
    // Neumann fallback: P^n 1 -> 0 iff the radius is below one.
    let mut term = DVector::from_element(k, 1.0);
    for _ in 0..cap.max(100_000) {
        term = p * &term;
        if term.amax() < SPECTRAL_TOL {
            return true;
        }
    }
    false
}
