//! Asymptotic variances and covariances of flows in stable open queueing
//! networks with Bernoulli routing.
//!
//! The crate computes, for every inter-queue flow `i -> j` and every
//! per-queue arrival stream, the long-run variance rate
//! `Var(count(t)) / t` and the matching covariance rates, through two
//! independent analytic routes that must agree:
//!
//! * a matrix route built from the structural matrices of the network
//!   ([`diffusion`]), and
//! * a routing-chain moment route built from expected transition counts
//!   of the absorbing routing chain ([`moments`]).
//!
//! Both are validated against a zero-service-time Monte-Carlo oracle
//! ([`oracle`]) and a full discrete-event simulator ([`sim`]).
//!
//! Replication-level Monte-Carlo work runs in parallel through rayon when
//! the `parallel` feature (on by default) is enabled; results are
//! bit-identical for any worker count because all cross-replication
//! accumulation is integer arithmetic in a fixed order.
//!
//! ```
//! use flowvar::diffusion::covariance_tables;
//! use flowvar::moments::VisitMoments;
//! use flowvar::network::FlowId;
//! use flowvar::testnet;
//!
//! let net = testnet::six_node().validate().unwrap();
//! let flow = FlowId::new(5, 4);
//!
//! // Matrix route and moment route agree on the variance rate.
//! let tables = covariance_tables(&net);
//! let matrix = tables.flow_var(flow).unwrap();
//! let moment = VisitMoments::new(&net).flow_cov_rate(flow, flow);
//! assert!((matrix - 199.0 / 18.0).abs() < 1e-9);
//! assert!((matrix - moment).abs() < 1e-12);
//! ```

pub mod diffusion;
pub mod dist;
pub mod error;
pub mod moments;
pub mod network;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod runner;
pub mod sim;
pub mod stats;
pub mod testnet;

pub use diffusion::{CovarianceTables, StructuralMatrices};
pub use error::{AnalysisError, InputError, OracleError, SimError, ValidationError};
pub use moments::VisitMoments;
pub use network::{FlowId, NetworkSpec, ServerGroup, ServerLoad, ValidatedNetwork};
