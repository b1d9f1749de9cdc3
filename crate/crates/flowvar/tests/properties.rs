//! Structural invariants of the analytic routes on randomly generated
//! open networks.

mod common;

use proptest::prelude::*;
use rand::Rng;

use common::random_stable_network;
use flowvar::diffusion::{build_structural, covariance_tables};
use flowvar::moments::VisitMoments;
use flowvar::network::{FlowId, NetworkSpec};
use flowvar::rng::substream;

/// Smallest eigenvalue must not undercut -1e-8 times the largest: both
/// covariance tables are positive semidefinite up to rounding.
#[test]
fn covariance_tables_are_positive_semidefinite() {
    let mut rng = substream(0xC0FFEE, 0, 0);
    for case in 0..200 {
        let net = random_stable_network(&mut rng, 8).validate().unwrap();
        let tables = covariance_tables(&net);
        for (name, m) in [("flows", &tables.flows), ("arrivals", &tables.arrivals)] {
            let eig = m.clone().symmetric_eigen().eigenvalues;
            let max = eig.iter().cloned().fold(0.0f64, f64::max);
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                min >= -1e-8 * max.max(1e-300),
                "case {case}: {name} table has eigenvalue {min} (max {max})"
            );
        }
    }
}

/// Summing the flow table over source pairs recovers the arrival table
/// minus its exogenous contributions.
#[test]
fn arrival_table_aggregates_the_flow_table() {
    let mut rng = substream(0xA66, 0, 0);
    for _ in 0..100 {
        let net = random_stable_network(&mut rng, 6).validate().unwrap();
        let k = net.k();
        let tables = covariance_tables(&net);
        let vm = VisitMoments::new(&net);
        let v2 = net.v2();
        for j1 in 1..=k {
            for j2 in 1..=k {
                let trans_sum = |a: usize, b: usize| -> f64 {
                    (1..=k)
                        .map(|i| vm.transition_mean(FlowId::new(i, b))[a - 1])
                        .sum()
                };
                let mut exogenous =
                    v2[j1 - 1] * trans_sum(j1, j2) + v2[j2 - 1] * trans_sum(j2, j1);
                if j1 == j2 {
                    exogenous += v2[j1 - 1];
                }
                let mut internal = 0.0;
                for i1 in 1..=k {
                    for i2 in 1..=k {
                        internal += tables.flows[(
                            FlowId::new(i1, j1).index(k),
                            FlowId::new(i2, j2).index(k),
                        )];
                    }
                }
                let got = tables.arrivals[(j1 - 1, j2 - 1)];
                let want = exogenous + internal;
                assert!(
                    (got - want).abs() <= 1e-8 * want.abs().max(1.0),
                    "entry ({j1},{j2}): {got} vs {want}"
                );
            }
        }
    }
}

/// The two analytic routes agree entrywise on random networks (a smaller
/// companion of the timed acceptance run).
#[test]
fn routes_agree_on_random_networks() {
    let mut rng = substream(0x2A, 0, 0);
    for case in 0..50 {
        let net = random_stable_network(&mut rng, 6).validate().unwrap();
        let a = covariance_tables(&net);
        let b = VisitMoments::new(&net).tables();
        for (x, y) in a.flows.iter().zip(b.flows.iter()) {
            assert!(
                (x - y).abs() <= 1e-8 * x.abs().max(1e-2),
                "case {case}: flow entry {x} vs {y}"
            );
        }
        for (x, y) in a.arrivals.iter().zip(b.arrivals.iter()) {
            assert!(
                (x - y).abs() <= 1e-8 * x.abs().max(1e-2),
                "case {case}: arrival entry {x} vs {y}"
            );
        }
    }
}

/// Unit-vector routing rows leave no routing noise at all: the primitive
/// covariance keeps only its arrival block.
#[test]
fn deterministic_routing_rows_have_no_noise_blocks() {
    let spec = NetworkSpec::new(
        vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
        ],
        vec![1.0, 0.5, 0.0],
        vec![2.0, 0.5, 0.0],
        vec![9.0, 9.0, 9.0],
    );
    let net = spec.validate().unwrap();
    let s = build_structural(&net);
    let k = 3;
    let routing_block = s.primitive_cov.view((k, k), (k * k, k * k));
    assert_eq!(routing_block.amax(), 0.0);
    // Rank of the primitive covariance is then at most K.
    let eig = s.primitive_cov.clone().symmetric_eigen().eigenvalues;
    let nonzero = eig.iter().filter(|&&x| x.abs() > 1e-12).count();
    assert!(nonzero <= k);
}

/// Tour-count moments sampled by the oracle agree with the moment route
/// on a randomly drawn network, within Monte-Carlo error.
#[test]
fn tour_oracle_matches_moment_route_on_a_random_network() {
    let mut rng = substream(0xD1CE, 0, 0);
    let spec = loop {
        // Draw until the network has a K = 4 topology with some routing.
        let candidate = random_stable_network(&mut rng, 4);
        if candidate.k == 4 && candidate.p.iter().flatten().any(|&p| p > 0.05) {
            break candidate;
        }
    };
    let net = spec.validate().unwrap();
    let vm = VisitMoments::new(&net);
    let flows: Vec<FlowId> = (0..16)
        .map(|idx| FlowId::from_index(idx, 4))
        .filter(|f| net.routing()[(f.i - 1, f.j - 1)] > 0.0)
        .collect();
    let pairs = vec![(flows[0], flows[flows.len() - 1])];
    let est =
        flowvar::oracle::tour_moment_estimates(&net, &flows, &pairs, 200_000, 17, None).unwrap();
    for start in 1..=4 {
        for &f in &flows {
            let e = est.mean(start, f).unwrap();
            let want = vm.transition_mean(f)[start - 1];
            let slack = 4.0 * e.se + 1e-9;
            assert!(
                (e.estimate - want).abs() <= slack,
                "start {start}, flow {f}: {} vs {want} (se {})",
                e.estimate,
                e.se
            );
        }
        let (f1, f2) = pairs[0];
        let c = est.covariance(start, f1, f2).unwrap();
        let want = vm.covariance(f1, f2)[start - 1];
        assert!(
            (c.estimate - want).abs() <= 4.0 * c.se + 1e-9,
            "start {start}: covariance {} vs {want} (se {})",
            c.estimate,
            c.se
        );
    }
}

fn spec_strategy(max_k: usize) -> impl Strategy<Value = NetworkSpec> {
    (1..=max_k).prop_flat_map(|k| {
        (
            prop::collection::vec(prop::collection::vec(0.0..1.0f64, k), k),
            prop::collection::vec(0.0..0.95f64, k),
            prop::collection::vec(0.01..5.0f64, k),
            prop::collection::vec(0.0..10.0f64, k),
            prop::collection::vec(0.1..10.0f64, k),
        )
            .prop_map(move |(raw, totals, alpha, v2, mu)| {
                let mut p = vec![vec![0.0; k]; k];
                for (i, row) in p.iter_mut().enumerate() {
                    let sum: f64 = raw[i].iter().sum();
                    if sum > 0.0 {
                        for (cell, r) in row.iter_mut().zip(&raw[i]) {
                            *cell = r * totals[i] / sum;
                        }
                    }
                }
                NetworkSpec::new(p, alpha, v2, mu)
            })
    })
}

proptest! {
    /// Validation does not depend on the scale of the arrival vector.
    #[test]
    fn validation_is_arrival_scale_invariant(
        spec in spec_strategy(5),
        lambda in 0.001..1000.0f64,
    ) {
        let mut scaled = spec.clone();
        for a in scaled.alpha.iter_mut() {
            *a *= lambda;
        }
        prop_assert_eq!(spec.validate().is_ok(), scaled.validate().is_ok());
    }

    /// The fundamental matrix dominates the identity entrywise.
    #[test]
    fn fundamental_matrix_dominates_identity(spec in spec_strategy(5)) {
        let net = spec.validate().unwrap();
        let f = net.fundamental();
        for q in 0..net.k() {
            prop_assert!(f[(q, q)] >= 1.0 - 1e-12);
        }
        prop_assert!(f.iter().all(|&x| x >= -1e-12));
    }

    /// Throughput solves the traffic equations.
    #[test]
    fn throughput_is_a_traffic_fixed_point(spec in spec_strategy(5)) {
        let net = spec.validate().unwrap();
        let resid = net.alpha() + net.routing().transpose() * net.nu() - net.nu();
        prop_assert!(resid.amax() <= 1e-10 * net.nu().amax().max(1.0));
    }

    /// Per-tour cross moments do not depend on the order of the flows.
    #[test]
    fn cross_moments_are_symmetric(spec in spec_strategy(4), seed in 0u64..1000) {
        let net = spec.validate().unwrap();
        let vm = VisitMoments::new(&net);
        let k = net.k();
        let mut rng = substream(seed, 0, 0);
        let f1 = FlowId::from_index(rng.random_range(0..k * k), k);
        let f2 = FlowId::from_index(rng.random_range(0..k * k), k);
        prop_assert_eq!(vm.cross_moment(f1, f2), vm.cross_moment(f2, f1));
    }
}
