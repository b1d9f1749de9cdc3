//! Cross-layer Monte-Carlo agreement: zero-service oracle against the
//! analytic slopes, and the discrete-event engine against the oracle in
//! its degenerate-service limit.

use flowvar::dist::Distribution;
use flowvar::network::FlowId;
use flowvar::oracle::run_zero_service;
use flowvar::sim::{run_experiment, Experiment, SimOptions};
use flowvar::testnet;

/// Poisson arrivals through a deterministic tandem: the 1 -> 2 counts are
/// a copy of the arrival process, so their variance rate is alpha.
#[test]
fn tandem_poisson_zero_service_variance() {
    let net = testnet::tandem(2.0, 2.0).validate().unwrap();
    let arrivals = vec![Some(Distribution::exponential(2.0)), None];
    let run = run_zero_service(
        &net,
        &arrivals,
        1000.0,
        &[1000.0],
        10_000,
        31,
        &[FlowId::new(1, 2)],
        &[],
        None,
    )
    .unwrap();
    let s = run.flow_stat(0, 0);
    let got = s.var / 1000.0;
    assert!(
        (got - 2.0).abs() <= 0.05 * 2.0,
        "Var/t = {got}, want within 5% of 2"
    );
}

/// With 1e-9 services the queued network reduces to the zero-service
/// construction; the two variance estimates must agree within their
/// combined Monte-Carlo error.
#[test]
fn degenerate_services_reduce_to_the_oracle() {
    let net = testnet::six_node().validate().unwrap();
    let flow_d = FlowId::new(5, 4);
    let flow_o = FlowId::new(4, 5); // same loop, identical statistics
    let reps = 3000;

    let exp = Experiment::new(
        net.clone(),
        testnet::six_node_arrivals(),
        vec![Distribution::deterministic(1e-9); 6],
        500.0,
        vec![500.0],
        reps,
        4242,
    )
    .unwrap();
    let sim = run_experiment(&exp, &[flow_d], &SimOptions::default()).unwrap();
    let s_sim = sim.flow_stat(0, 0);

    let oracle = run_zero_service(
        &net,
        &testnet::six_node_arrivals(),
        500.0,
        &[500.0],
        reps,
        4242,
        &[flow_o],
        &[],
        None,
    )
    .unwrap();
    let s_orc = oracle.flow_stat(0, 0);

    let diff = (s_sim.var - s_orc.var).abs();
    let budget = 4.0 * (s_sim.var_se.powi(2) + s_orc.var_se.powi(2)).sqrt();
    assert!(
        diff <= budget,
        "simulator {} vs oracle {} (budget {budget})",
        s_sim.var,
        s_orc.var
    );
    // Both sit near the analytic slope at this horizon.
    let slope = 199.0 / 18.0 * 500.0;
    assert!(
        (s_orc.var - slope).abs() <= 4.0 * s_orc.var_se + 0.01 * slope,
        "oracle variance {} vs slope {slope}",
        s_orc.var
    );
}

/// The split covariance changes sign with the arrival variability: the
/// oracle sees it negative for the low-variability stream into queue 2.
#[test]
fn split_covariance_sign_matches_arrival_variability() {
    let net = testnet::six_node().validate().unwrap();
    let pair = (FlowId::new(2, 1), FlowId::new(2, 4));
    let run = run_zero_service(
        &net,
        &testnet::six_node_arrivals(),
        500.0,
        &[500.0],
        4000,
        99,
        &[],
        &[pair],
        None,
    )
    .unwrap();
    let (_, _, cov) = &run.pair_stats[0];
    assert!(
        cov.cov + 4.0 * cov.cov_se < 0.0,
        "want negative at 4 SE, got {} +/- {}",
        cov.cov,
        cov.cov_se
    );
    // And the point estimate is consistent with the analytic -1/2 rate.
    let want = -0.5 * 500.0;
    assert!(
        (cov.cov - want).abs() <= 4.0 * cov.cov_se,
        "cov {} vs {want}",
        cov.cov
    );
}
