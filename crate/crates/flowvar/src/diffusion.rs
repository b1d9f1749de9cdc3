//! Structural matrices of the network and the covariance tables of the
//! flow and arrival processes (the matrix route).
//!
//! The asymptotic covariances come out of one quadratic form: the
//! `K^2 x K^2` flow table is `H S H'` and the `K x K` arrival table is
//! `(B H + [I 0]) S (B H + [I 0])'`, where `S` is the covariance of the
//! primitive noise (exogenous arrivals plus Bernoulli routing) and `H`
//! maps that noise onto the flows. Everything here is a pure function of
//! a [`ValidatedNetwork`].

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::AnalysisError;
use crate::network::{FlowId, ValidatedNetwork};

/// Relative asymmetry beyond this is an internal error: the quadratic
/// forms are symmetric up to rounding.
const SYMMETRY_TOL: f64 = 1e-9;

/// The four structural matrices of a network.
#[derive(Debug, Clone)]
pub struct StructuralMatrices {
    /// `K x K^2` aggregation matrix summing flow components per
    /// destination queue: row `j` has a one in every column `(i, j)`.
    pub flow_sum: DMatrix<f64>,
    /// `K^2 x K` lift of per-queue departure perturbations into flow
    /// space: row `(i, j)` has `p[i][j]` in column `i`.
    pub routing_lift: DMatrix<f64>,
    /// `K^2 x (K + K^2)` map from primitive noise (arrivals, routing) to
    /// flows.
    pub flow_map: DMatrix<f64>,
    /// `(K + K^2) x (K + K^2)` block-diagonal covariance of the primitive
    /// noise: `diag(v2)` followed by one `nu_k`-scaled multinomial routing
    /// covariance block per queue.
    pub primitive_cov: DMatrix<f64>,
}

/// Build the structural matrices. The only inversion happens through `K`
/// linear solves against the cached factorization of `I - P'`.
pub fn build_structural(net: &ValidatedNetwork) -> StructuralMatrices {
    let k = net.k();
    let k2 = k * k;
    let p = net.routing();
    let nu = net.nu();
    let v2 = net.v2();

    let flow_sum = RowDVector::<f64>::from_element(k, 1.0).kronecker(&DMatrix::identity(k, k));

    let mut routing_lift = DMatrix::zeros(k2, k);
    for i in 0..k {
        for j in 0..k {
            routing_lift[(i * k + j, i)] = p[(i, j)];
        }
    }

    // W = routing_lift * (I - P')^-1, K solves.
    let inv_t = net.solve_routing_t_mat(&DMatrix::identity(k, k));
    let w = &routing_lift * &inv_t;

    let mut flow_map = DMatrix::zeros(k2, k + k2);
    flow_map.view_mut((0, 0), (k2, k)).copy_from(&w);
    let right = DMatrix::identity(k2, k2) + &w * &flow_sum;
    flow_map.view_mut((0, k), (k2, k2)).copy_from(&right);

    let mut primitive_cov = DMatrix::zeros(k + k2, k + k2);
    for q in 0..k {
        primitive_cov[(q, q)] = v2[q];
    }
    for q in 0..k {
        for a in 0..k {
            for b in 0..k {
                let delta = if a == b { 1.0 } else { 0.0 };
                primitive_cov[(k + q * k + a, k + q * k + b)] =
                    nu[q] * p[(q, a)] * (delta - p[(q, b)]);
            }
        }
    }

    StructuralMatrices {
        flow_sum,
        routing_lift,
        flow_map,
        primitive_cov,
    }
}

/// Symmetrize `(m + m') / 2`, killing rounding skew. Asymmetry beyond
/// [`SYMMETRY_TOL`] relative would be a bug in the construction.
fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    let scale = m.amax();
    if scale > 0.0 {
        let skew = (&m - m.transpose()).amax();
        debug_assert!(
            skew <= SYMMETRY_TOL * scale,
            "covariance matrix asymmetry {skew} exceeds {SYMMETRY_TOL} relative"
        );
    }
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Asymptotic covariance matrix of the inter-queue flows (`K^2 x K^2`).
pub fn flow_covariance_matrix(net: &ValidatedNetwork) -> DMatrix<f64> {
    let s = build_structural(net);
    flow_cov_from(&s)
}

fn flow_cov_from(s: &StructuralMatrices) -> DMatrix<f64> {
    symmetrized(&s.flow_map * &s.primitive_cov * s.flow_map.transpose())
}

/// Asymptotic covariance matrix of the per-queue arrival streams (`K x K`).
pub fn arrival_covariance_matrix(net: &ValidatedNetwork) -> DMatrix<f64> {
    let s = build_structural(net);
    arrival_cov_from(net.k(), &s)
}

fn arrival_cov_from(k: usize, s: &StructuralMatrices) -> DMatrix<f64> {
    let k2 = k * k;
    let mut g = &s.flow_sum * &s.flow_map;
    for q in 0..k {
        g[(q, q)] += 1.0;
    }
    debug_assert_eq!(g.ncols(), k + k2);
    symmetrized(&g * &s.primitive_cov * g.transpose())
}

/// Both covariance tables with labeled accessors.
#[derive(Debug, Clone)]
pub struct CovarianceTables {
    k: usize,
    /// `K^2 x K^2` flow covariance matrix; entry `(f1, f2)` at the
    /// canonical flow indices.
    pub flows: DMatrix<f64>,
    /// `K x K` arrival covariance matrix.
    pub arrivals: DMatrix<f64>,
}

/// Evaluate both tables, sharing the structural matrices.
pub fn covariance_tables(net: &ValidatedNetwork) -> CovarianceTables {
    let s = build_structural(net);
    CovarianceTables {
        k: net.k(),
        flows: flow_cov_from(&s),
        arrivals: arrival_cov_from(net.k(), &s),
    }
}

impl CovarianceTables {
    pub fn new(k: usize, flows: DMatrix<f64>, arrivals: DMatrix<f64>) -> Self {
        assert_eq!(flows.nrows(), k * k);
        assert_eq!(arrivals.nrows(), k);
        Self { k, flows, arrivals }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn check_flow(&self, f: FlowId) -> Result<usize, AnalysisError> {
        if f.in_range(self.k) {
            Ok(f.index(self.k))
        } else {
            Err(AnalysisError::FlowOutOfRange { flow: f, k: self.k })
        }
    }

    /// Asymptotic covariance rate of two flows.
    pub fn flow_cov(&self, f1: FlowId, f2: FlowId) -> Result<f64, AnalysisError> {
        Ok(self.flows[(self.check_flow(f1)?, self.check_flow(f2)?)])
    }

    /// Asymptotic variance rate of one flow.
    pub fn flow_var(&self, f: FlowId) -> Result<f64, AnalysisError> {
        self.flow_cov(f, f)
    }

    /// Asymptotic covariance rate of two per-queue arrival streams
    /// (1-based queue indices).
    pub fn arrival_cov(&self, j1: usize, j2: usize) -> Result<f64, AnalysisError> {
        for q in [j1, j2] {
            if q == 0 || q > self.k {
                return Err(AnalysisError::QueueOutOfRange { queue: q, k: self.k });
            }
        }
        Ok(self.arrivals[(j1 - 1, j2 - 1)])
    }

    /// Squared coefficients of variation of the arrival streams:
    /// diagonal of the arrival table over the throughput. `None` marks
    /// queues with zero throughput, where the ratio is undefined.
    pub fn scv(&self, nu: &DVector<f64>) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|q| {
                if nu[q] > 0.0 {
                    Some(self.arrivals[(q, q)] / nu[q])
                } else {
                    None
                }
            })
            .collect()
    }

    /// SCV of a single queue (1-based), erroring on zero throughput.
    pub fn scv_of(&self, queue: usize, nu: &DVector<f64>) -> Result<f64, AnalysisError> {
        if queue == 0 || queue > self.k {
            return Err(AnalysisError::QueueOutOfRange { queue, k: self.k });
        }
        if nu[queue - 1] > 0.0 {
            Ok(self.arrivals[(queue - 1, queue - 1)] / nu[queue - 1])
        } else {
            Err(AnalysisError::UndefinedForZeroRate { queue })
        }
    }

    /// Asymptotic correlation coefficient of two flows.
    pub fn correlation(&self, f1: FlowId, f2: FlowId) -> Result<f64, AnalysisError> {
        let v1 = self.flow_var(f1)?;
        let v2 = self.flow_var(f2)?;
        for (f, v) in [(f1, v1), (f2, v2)] {
            if v <= 0.0 {
                return Err(AnalysisError::UndefinedForZeroVarianceFlow { flow: f });
            }
        }
        Ok(self.flow_cov(f1, f2)? / (v1 * v2).sqrt())
    }
}
