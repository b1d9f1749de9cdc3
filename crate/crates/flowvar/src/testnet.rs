//! Ready-made example networks, shared by the test suites and handy for
//! demos.

use crate::dist::Distribution;
use crate::network::{NetworkSpec, ServerGroup};
use crate::sim::Experiment;

/// Six-queue network with two exogenous streams, two Bernoulli splits and
/// a deterministic 4 <-> 5 loop. Its covariance tables have simple closed
/// forms, which makes it the workhorse of the test suite.
pub fn six_node() -> NetworkSpec {
    NetworkSpec::new(
        vec![
            vec![0.0, 0.0, 0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.0, 0.0, 0.5, 0.0, 0.0],
            vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ],
        vec![1.0, 4.0, 0.0, 0.0, 0.0, 0.0],
        vec![2.0, 2.0, 0.0, 0.0, 0.0, 0.0],
        vec![8.25, 8.25, 5.0, 8.25, 5.0, 5.0],
    )
}

/// Same network with the arrival variance rate of queue 2 replaced, used
/// to sweep the correlation sign of the split at queue 2.
pub fn six_node_with_v2(v2_of_queue_2: f64) -> NetworkSpec {
    let mut spec = six_node();
    spec.v2[1] = v2_of_queue_2;
    spec
}

/// Two queues in series: everything arriving at queue 1 moves to queue 2
/// and then leaves.
pub fn tandem(alpha1: f64, v2_1: f64) -> NetworkSpec {
    NetworkSpec::new(
        vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        vec![alpha1, 0.0],
        vec![v2_1, 0.0],
        vec![2.0 * alpha1 + 1.0, 2.0 * alpha1 + 1.0],
    )
}

/// A single queue with no routing at all.
pub fn single(alpha: f64, v2: f64, mu: f64) -> NetworkSpec {
    NetworkSpec::new(vec![vec![0.0]], vec![alpha], vec![v2], vec![mu])
}

/// Arrival streams matching the six-node rates: a hyperexponential
/// renewal stream into queue 1 (rate 1, variance rate 2) and an Erlang-2
/// stream into queue 2 (rate 4, variance rate 2).
pub fn six_node_arrivals() -> Vec<Option<Distribution>> {
    vec![
        Some(Distribution::hyperexponential(
            vec![1.0 / 3.0, 2.0 / 3.0],
            vec![0.5, 2.0],
        )),
        Some(Distribution::erlang(2, 8.0)),
        None,
        None,
        None,
        None,
    ]
}

/// Erlang-2 services with mean `1 / mu_k` for the six-node network.
pub fn six_node_services() -> Vec<Distribution> {
    six_node()
        .mu
        .iter()
        .map(|&mu| Distribution::erlang(2, 2.0 * mu))
        .collect()
}

/// Simulation experiment on the six-node network. `multi_class` puts
/// queues 1 and 2 on one shared server with non-preemptive priority to
/// queue 1; otherwise every queue has its own server.
pub fn six_node_experiment(
    multi_class: bool,
    horizon: f64,
    grid: Vec<f64>,
    replications: u64,
    seed: u64,
) -> Experiment {
    let mut spec = six_node();
    if multi_class {
        spec.servers = vec![ServerGroup {
            queues: vec![1, 2],
            priority: Some(vec![1, 2]),
        }];
    }
    Experiment::new(
        spec.validate().expect("example network is valid"),
        six_node_arrivals(),
        six_node_services(),
        horizon,
        grid,
        replications,
        seed,
    )
    .expect("example experiment is valid")
}
