//! Flow and arrival covariances through the routing-chain moment route.
//!
//! A job entering the network performs a tour of the absorbing Markov
//! chain defined by the routing matrix. This module computes the expected
//! per-tour transition counts `m(i, j)` (one entry per possible start
//! node), the second cross moments of those counts, and from them the
//! same asymptotic covariance rates as [`crate::diffusion`] by an
//! entirely independent formula. The two routes agreeing entrywise is the
//! strongest internal check the crate has.
//!
//! All applications of `(I - P)^-1` are linear solves against the
//! factorization cached in the [`ValidatedNetwork`].

use nalgebra::{DMatrix, DVector};

use crate::diffusion::CovarianceTables;
use crate::network::{FlowId, ValidatedNetwork};

/// Moment queries for the routing tours of one validated network.
#[derive(Debug, Clone, Copy)]
pub struct VisitMoments<'n> {
    net: &'n ValidatedNetwork,
}

impl<'n> VisitMoments<'n> {
    pub fn new(net: &'n ValidatedNetwork) -> Self {
        Self { net }
    }

    pub fn k(&self) -> usize {
        self.net.k()
    }

    /// Expected number of visits to queue `j` for a job entering at
    /// queue `start` (1-based), counting the entry itself.
    pub fn expected_visits(&self, start: usize, j: usize) -> f64 {
        self.net.fundamental()[(start - 1, j - 1)]
    }

    /// `K x K` matrix of expected visits; row `start`, column `j`
    /// (0-based offsets of the 1-based queue indices).
    pub fn visit_matrix(&self) -> &DMatrix<f64> {
        self.net.fundamental()
    }

    /// Expected number of `i -> j` transitions per tour, one entry per
    /// start node: the solution of `(I - P) m = p[i][j] e_i`.
    pub fn transition_mean(&self, f: FlowId) -> DVector<f64> {
        let k = self.k();
        let mut rhs = DVector::zeros(k);
        rhs[f.i - 1] = self.net.routing()[(f.i - 1, f.j - 1)];
        self.net.solve_routing(&rhs)
    }

    /// Expected number of exits to the outside from queue `i` per tour,
    /// one entry per start node.
    pub fn exit_mean(&self, i: usize) -> DVector<f64> {
        let k = self.k();
        let p_exit = self.net.routing_prob(i, 0);
        DVector::from_fn(k, |start, _| {
            self.net.fundamental()[(start, i - 1)] * p_exit
        })
    }

    /// Second cross moment of two per-tour transition counts, one entry
    /// per start node.
    pub fn cross_moment(&self, f1: FlowId, f2: FlowId) -> DVector<f64> {
        let m1 = self.transition_mean(f1);
        if f1 == f2 {
            let factor = 1.0 + 2.0 * m1[f1.j - 1];
            return m1 * factor;
        }
        let m2 = self.transition_mean(f2);
        &m1 * m2[f1.j - 1] + &m2 * m1[f2.j - 1]
    }

    /// Covariance of two per-tour transition counts, one entry per start
    /// node.
    pub fn covariance(&self, f1: FlowId, f2: FlowId) -> DVector<f64> {
        let mut c = self.cross_moment(f1, f2);
        let m1 = self.transition_mean(f1);
        let m2 = self.transition_mean(f2);
        for s in 0..self.k() {
            c[s] -= m1[s] * m2[s];
        }
        c
    }

    /// Asymptotic covariance rate of two flows.
    pub fn flow_cov_rate(&self, f1: FlowId, f2: FlowId) -> f64 {
        let alpha = self.net.alpha();
        let v2 = self.net.v2();
        let m1 = self.transition_mean(f1);
        if f1 == f2 {
            let drive = alpha.dot(&m1);
            let quad: f64 = (0..self.k())
                .map(|s| (v2[s] - alpha[s]) * m1[s] * m1[s])
                .sum();
            return (1.0 + 2.0 * m1[f1.j - 1]) * drive + quad;
        }
        let m2 = self.transition_mean(f2);
        let quad: f64 = (0..self.k())
            .map(|s| (v2[s] - alpha[s]) * m1[s] * m2[s])
            .sum();
        m2[f1.j - 1] * alpha.dot(&m1) + m1[f2.j - 1] * alpha.dot(&m2) + quad
    }

    /// Expected transitions into queue `j` over a whole tour starting at
    /// `start`: the expected visits minus the initial entry when the tour
    /// starts there.
    fn transitions_into(&self, start: usize, j: usize) -> f64 {
        let f = self.net.fundamental();
        let p = self.net.routing();
        (0..self.k()).map(|i| f[(start - 1, i)] * p[(i, j - 1)]).sum()
    }

    /// Asymptotic covariance rate of two per-queue arrival streams.
    ///
    /// The exogenous part combines the per-tour transition sums with the
    /// `j1 == j2` self term of the exogenous streams; the internal part
    /// aggregates the flow covariances over all source pairs.
    pub fn arrival_cov_rate(&self, j1: usize, j2: usize) -> f64 {
        let v2 = self.net.v2();
        let p = self.net.routing();
        let mut total = v2[j1 - 1] * self.transitions_into(j1, j2)
            + v2[j2 - 1] * self.transitions_into(j2, j1);
        if j1 == j2 {
            total += v2[j1 - 1];
        }
        for i1 in 1..=self.k() {
            if p[(i1 - 1, j1 - 1)] == 0.0 {
                continue;
            }
            for i2 in 1..=self.k() {
                if p[(i2 - 1, j2 - 1)] == 0.0 {
                    continue;
                }
                total += self.flow_cov_rate(FlowId::new(i1, j1), FlowId::new(i2, j2));
            }
        }
        total
    }

    /// Full covariance tables through the moment route; the counterpart
    /// of [`crate::diffusion::covariance_tables`].
    pub fn tables(&self) -> CovarianceTables {
        let k = self.k();
        let k2 = k * k;
        let mut flows = DMatrix::zeros(k2, k2);
        for a in 0..k2 {
            let f1 = FlowId::from_index(a, k);
            for b in a..k2 {
                let f2 = FlowId::from_index(b, k);
                let v = self.flow_cov_rate(f1, f2);
                flows[(a, b)] = v;
                flows[(b, a)] = v;
            }
        }
        let mut arrivals = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = self.arrival_cov_rate(a + 1, b + 1);
                arrivals[(a, b)] = v;
                arrivals[(b, a)] = v;
            }
        }
        CovarianceTables::new(k, flows, arrivals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;
    use crate::testnet;

    fn assert_close(got: f64, want: f64, tol: f64) {
        let scale = want.abs().max(1.0);
        assert!(
            (got - want).abs() <= tol * scale,
            "got {got}, want {want} (tol {tol})"
        );
    }

    #[test]
    fn tandem_transition_mean_by_hand() {
        let net = testnet::tandem(2.0, 8.0).validate().unwrap();
        let m = VisitMoments::new(&net).transition_mean(FlowId::new(1, 2));
        assert_close(m[0], 1.0, 1e-14);
        assert_close(m[1], 0.0, 1e-14);
    }

    #[test]
    fn no_routing_means_no_transitions() {
        let spec = NetworkSpec::new(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
        );
        let net = spec.validate().unwrap();
        let vm = VisitMoments::new(&net);
        for i in 1..=2 {
            for j in 1..=2 {
                assert_eq!(vm.transition_mean(FlowId::new(i, j)).amax(), 0.0);
                let m2 = vm.cross_moment(FlowId::new(i, j), FlowId::new(j, i));
                assert_eq!(m2.amax(), 0.0);
            }
        }
    }

    #[test]
    fn tandem_equal_flow_cross_moment_is_deterministic() {
        let net = testnet::tandem(2.0, 8.0).validate().unwrap();
        let vm = VisitMoments::new(&net);
        let f = FlowId::new(1, 2);
        let m2 = vm.cross_moment(f, f);
        assert_close(m2[0], 1.0, 1e-14);
        assert_close(m2[1], 0.0, 1e-14);
        let c = vm.covariance(f, f);
        assert_close(c[0], 0.0, 1e-14);
        assert_close(c[1], 0.0, 1e-14);
    }

    #[test]
    fn cross_moment_is_symmetric_in_its_flows() {
        let net = testnet::six_node().validate().unwrap();
        let vm = VisitMoments::new(&net);
        for a in 0..36 {
            for b in 0..36 {
                let f1 = FlowId::from_index(a, 6);
                let f2 = FlowId::from_index(b, 6);
                assert_eq!(vm.cross_moment(f1, f2), vm.cross_moment(f2, f1));
            }
        }
    }

    #[test]
    fn six_node_flow_rates_match_closed_forms() {
        let net = testnet::six_node().validate().unwrap();
        let vm = VisitMoments::new(&net);
        assert_close(vm.flow_cov_rate(FlowId::new(3, 1), FlowId::new(3, 1)), 31.0 / 18.0, 1e-12);
        assert_close(vm.flow_cov_rate(FlowId::new(2, 1), FlowId::new(2, 4)), -0.5, 1e-12);
        assert_close(vm.flow_cov_rate(FlowId::new(4, 5), FlowId::new(4, 5)), 199.0 / 18.0, 1e-12);
        assert_close(vm.flow_cov_rate(FlowId::new(1, 3), FlowId::new(4, 6)), 5.0 / 9.0, 1e-12);
    }

    #[test]
    fn tandem_flow_variance_is_the_arrival_variance() {
        let net = testnet::tandem(2.0, 8.0).validate().unwrap();
        let vm = VisitMoments::new(&net);
        assert_close(vm.flow_cov_rate(FlowId::new(1, 2), FlowId::new(1, 2)), 8.0, 1e-14);
    }

    #[test]
    fn six_node_arrival_rates() {
        let net = testnet::six_node().validate().unwrap();
        let vm = VisitMoments::new(&net);
        assert_close(vm.arrival_cov_rate(1, 1), 68.0 / 9.0, 1e-12);
        assert_close(vm.arrival_cov_rate(2, 2), 2.0, 1e-12);
        assert_close(vm.arrival_cov_rate(1, 2), 4.0 / 3.0, 1e-12);
    }

    #[test]
    fn isolated_queue_arrival_variance_is_exogenous() {
        let spec = NetworkSpec::new(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![1.0, 2.0],
            vec![3.0, 5.0],
            vec![4.0, 4.0],
        );
        let net = spec.validate().unwrap();
        let vm = VisitMoments::new(&net);
        assert_close(vm.arrival_cov_rate(1, 1), 3.0, 1e-14);
        assert_close(vm.arrival_cov_rate(2, 2), 5.0, 1e-14);
        assert_close(vm.arrival_cov_rate(1, 2), 0.0, 1e-14);
    }

    #[test]
    fn departures_conserve_visits() {
        // Every visit to i produces exactly one departure, inside or out.
        let net = testnet::six_node().validate().unwrap();
        let vm = VisitMoments::new(&net);
        for start in 1..=6 {
            for i in 1..=6 {
                let internal: f64 = (1..=6)
                    .map(|j| vm.transition_mean(FlowId::new(i, j))[start - 1])
                    .sum();
                let out = vm.exit_mean(i)[start - 1];
                assert_close(internal + out, vm.expected_visits(start, i), 1e-12);
            }
        }
    }

    #[test]
    fn poisson_scaling_homogeneity() {
        // With v2 = alpha the rates are homogeneous of degree one in the
        // arrival intensity.
        let base = NetworkSpec::new(
            vec![
                vec![0.1, 0.4, 0.2],
                vec![0.3, 0.0, 0.3],
                vec![0.2, 0.2, 0.1],
            ],
            vec![1.0, 0.5, 0.25],
            vec![1.0, 0.5, 0.25],
            vec![10.0, 10.0, 10.0],
        );
        let lambda = 3.5;
        let mut scaled = base.clone();
        for q in 0..3 {
            scaled.alpha[q] *= lambda;
            scaled.v2[q] *= lambda;
        }
        let net_a = base.validate().unwrap();
        let net_b = scaled.validate().unwrap();
        let vm_a = VisitMoments::new(&net_a);
        let vm_b = VisitMoments::new(&net_b);
        for a in 0..9 {
            for b in 0..9 {
                let f1 = FlowId::from_index(a, 3);
                let f2 = FlowId::from_index(b, 3);
                assert_close(
                    vm_b.flow_cov_rate(f1, f2),
                    lambda * vm_a.flow_cov_rate(f1, f2),
                    1e-12,
                );
            }
        }
        for j1 in 1..=3 {
            for j2 in 1..=3 {
                assert_close(
                    vm_b.arrival_cov_rate(j1, j2),
                    lambda * vm_a.arrival_cov_rate(j1, j2),
                    1e-12,
                );
            }
        }
    }

    #[test]
    fn six_node_loop_flow_back_check() {
        // The 4 -> 5 transition means feed the 199/18 variance through the
        // equal-flow formula; checked against the matrix route elsewhere.
        let net = testnet::six_node().validate().unwrap();
        let vm = VisitMoments::new(&net);
        let m = vm.transition_mean(FlowId::new(4, 5));
        assert_close(m[3], 1.0, 1e-12); // start at 4
        assert_close(m[4], 1.0, 1e-12); // start at 5
        assert_close(vm.flow_cov_rate(FlowId::new(4, 5), FlowId::new(4, 5)), 199.0 / 18.0, 1e-12);
    }

    #[test]
    fn moment_route_tables_match_matrix_route_on_the_example() {
        let net = testnet::six_node().validate().unwrap();
        let a = crate::diffusion::covariance_tables(&net);
        let b = VisitMoments::new(&net).tables();
        let scale = a.flows.amax();
        assert!((&a.flows - &b.flows).amax() <= 1e-10 * scale);
        let scale = a.arrivals.amax();
        assert!((&a.arrivals - &b.arrivals).amax() <= 1e-10 * scale);
    }

    #[test]
    fn arrival_columns_five_and_six_agree_exactly() {
        // Bitwise equality: the moment route performs literally the same
        // float operations for both columns on this network.
        let net = testnet::six_node().validate().unwrap();
        let vm = VisitMoments::new(&net);
        for q in [1usize, 2, 3, 6] {
            assert_eq!(vm.arrival_cov_rate(q, 5), vm.arrival_cov_rate(q, 6));
        }
    }
}
