//! Zero-service-time Monte-Carlo oracle.
//!
//! With service times removed, every job performs its whole routing tour
//! at its arrival instant, so flow counts become sums of i.i.d. per-tour
//! transition counts over renewal arrival epochs. The asymptotic
//! covariances of these instantaneous flows equal those of the queued
//! system, which makes this sampler an independent check on both analytic
//! routes without any queueing dynamics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dist::Distribution;
use crate::error::{OracleError, SimError};
use crate::network::{FlowId, ValidatedNetwork};
use crate::rng::substream;
use crate::runner::fold_replications;
use crate::stats::{CovStats, MomentAccumulator, PairAccumulator, SumAccumulator, ValueStats};

/// Default per-tour step cap; hitting it signals a near-critical routing
/// matrix rather than an unlucky sample.
pub const DEFAULT_TOUR_STEP_CAP: u64 = 10_000_000;

/// One sampled routing tour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tour {
    /// Entry queue, 1-based.
    pub start: usize,
    /// Transition counts, flow-major (`K*K`).
    pub transitions: Vec<u64>,
    /// Exits to the outside per source queue (`K`).
    pub exits: Vec<u64>,
    /// Visit counts per queue, counting the entry (`K`).
    pub visits: Vec<u64>,
}

/// Cumulative routing rows for fast categorical sampling. Shared with
/// the discrete-event engine so both draw routes identically.
#[derive(Debug, Clone)]
pub(crate) struct RoutingSampler {
    k: usize,
    /// Row-major cumulative probabilities; a draw above the last entry
    /// leaves the network.
    cumulative: Vec<f64>,
}

impl RoutingSampler {
    pub(crate) fn new(net: &ValidatedNetwork) -> Self {
        let k = net.k();
        let p = net.routing();
        let mut cumulative = vec![0.0; k * k];
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                acc += p[(i, j)];
                cumulative[i * k + j] = acc;
            }
        }
        Self { k, cumulative }
    }

    /// Next queue (0-based) or `None` for absorption.
    pub(crate) fn next(&self, from: usize, rng: &mut impl Rng) -> Option<usize> {
        let u: f64 = rng.random();
        let row = &self.cumulative[from * self.k..(from + 1) * self.k];
        for (j, &c) in row.iter().enumerate() {
            if u < c {
                return Some(j);
            }
        }
        None
    }
}

/// Scratch counters reused across tours inside one batch.
struct TourScratch {
    transitions: Vec<u64>,
    exits: Vec<u64>,
    visits: Vec<u64>,
    touched: Vec<usize>,
}

impl TourScratch {
    fn new(k: usize) -> Self {
        Self {
            transitions: vec![0; k * k],
            exits: vec![0; k],
            visits: vec![0; k],
            touched: Vec::with_capacity(32),
        }
    }

    fn clear(&mut self, k: usize) {
        for &idx in &self.touched {
            self.transitions[idx] = 0;
        }
        self.touched.clear();
        self.exits[..k].fill(0);
        self.visits[..k].fill(0);
    }
}

fn walk_tour(
    sampler: &RoutingSampler,
    start: usize,
    rng: &mut impl Rng,
    cap: u64,
    scratch: &mut TourScratch,
) -> Result<(), OracleError> {
    let k = sampler.k;
    scratch.clear(k);
    let mut node = start - 1;
    scratch.visits[node] += 1;
    let mut steps = 0u64;
    loop {
        steps += 1;
        if steps > cap {
            return Err(OracleError::TourLengthExceeded { start, cap });
        }
        match sampler.next(node, rng) {
            Some(next) => {
                let idx = node * k + next;
                if scratch.transitions[idx] == 0 {
                    scratch.touched.push(idx);
                }
                scratch.transitions[idx] += 1;
                scratch.visits[next] += 1;
                node = next;
            }
            None => {
                scratch.exits[node] += 1;
                return Ok(());
            }
        }
    }
}

/// Sample one tour from queue `start` (1-based) with the default step cap.
pub fn sample_tour(
    net: &ValidatedNetwork,
    start: usize,
    rng: &mut impl Rng,
) -> Result<Tour, OracleError> {
    sample_tour_capped(net, start, rng, DEFAULT_TOUR_STEP_CAP)
}

pub fn sample_tour_capped(
    net: &ValidatedNetwork,
    start: usize,
    rng: &mut impl Rng,
    cap: u64,
) -> Result<Tour, OracleError> {
    let sampler = RoutingSampler::new(net);
    let mut scratch = TourScratch::new(net.k());
    walk_tour(&sampler, start, rng, cap, &mut scratch)?;
    Ok(Tour {
        start,
        transitions: scratch.transitions.clone(),
        exits: scratch.exits.clone(),
        visits: scratch.visits.clone(),
    })
}

/// A Monte-Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub se: f64,
    pub n: u64,
}

/// Sample means and covariances of per-tour transition counts, per start
/// node.
#[derive(Debug, Clone)]
pub struct TourMomentEstimates {
    pub tours_per_start: u64,
    pub flows: Vec<FlowId>,
    pub pairs: Vec<(FlowId, FlowId)>,
    /// Start-major: `means[start_0based * flows.len() + flow_pos]`.
    means: Vec<ValueStats>,
    /// Start-major: `covs[start_0based * pairs.len() + pair_pos]`.
    covs: Vec<CovStats>,
}

impl TourMomentEstimates {
    /// Estimate of the expected transition count of `flow` for tours
    /// entering at `start` (1-based).
    pub fn mean(&self, start: usize, flow: FlowId) -> Option<OracleEstimate> {
        let pos = self.flows.iter().position(|&f| f == flow)?;
        let s = self.means[(start - 1) * self.flows.len() + pos];
        Some(OracleEstimate {
            estimate: s.mean,
            se: s.mean_se,
            n: s.n,
        })
    }

    /// Estimate of the covariance of two per-tour transition counts for
    /// tours entering at `start` (1-based).
    pub fn covariance(&self, start: usize, f1: FlowId, f2: FlowId) -> Option<OracleEstimate> {
        let pos = self
            .pairs
            .iter()
            .position(|&(a, b)| (a, b) == (f1, f2) || (a, b) == (f2, f1))?;
        let s = self.covs[(start - 1) * self.pairs.len() + pos];
        Some(OracleEstimate {
            estimate: s.cov,
            se: s.cov_se,
            n: s.n,
        })
    }
}

/// Tours per scheduling batch; a fixed constant so that tour substreams
/// depend only on the tour index.
const TOUR_BATCH: u64 = 4096;

/// Estimate per-tour transition means for `flows` and covariances for
/// `pairs`, running `tours_per_start` independent tours from every queue.
pub fn tour_moment_estimates(
    net: &ValidatedNetwork,
    flows: &[FlowId],
    pairs: &[(FlowId, FlowId)],
    tours_per_start: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<TourMomentEstimates, OracleError> {
    let k = net.k();
    let sampler = RoutingSampler::new(net);
    let n_batches = tours_per_start.div_ceil(TOUR_BATCH);

    type Batch = (Vec<MomentAccumulator>, Vec<PairAccumulator>);
    let sample_batch = |batch: u64| -> Result<Batch, OracleError> {
        let mut means = vec![MomentAccumulator::new(0); k * flows.len()];
        let mut covs = vec![PairAccumulator::new(0, 0); k * pairs.len()];
        let mut scratch = TourScratch::new(k);
        let lo = batch * TOUR_BATCH;
        let hi = (lo + TOUR_BATCH).min(tours_per_start);
        for tour in lo..hi {
            for start in 1..=k {
                let mut rng = substream(seed, tour, (start - 1) as u64);
                walk_tour(&sampler, start, &mut rng, DEFAULT_TOUR_STEP_CAP, &mut scratch)?;
                for (pos, f) in flows.iter().enumerate() {
                    means[(start - 1) * flows.len() + pos]
                        .add(scratch.transitions[f.index(k)]);
                }
                for (pos, (f1, f2)) in pairs.iter().enumerate() {
                    covs[(start - 1) * pairs.len() + pos].add(
                        scratch.transitions[f1.index(k)],
                        scratch.transitions[f2.index(k)],
                    );
                }
            }
        }
        Ok((means, covs))
    };

    let mut total: Batch = (
        vec![MomentAccumulator::new(0); k * flows.len()],
        vec![PairAccumulator::new(0, 0); k * pairs.len()],
    );
    fold_replications(n_batches, threads, sample_batch, &mut total, |acc, part| {
        for (a, b) in acc.0.iter_mut().zip(&part.0) {
            a.merge(b);
        }
        for (a, b) in acc.1.iter_mut().zip(&part.1) {
            a.merge(b);
        }
    })?;

    Ok(TourMomentEstimates {
        tours_per_start,
        flows: flows.to_vec(),
        pairs: pairs.to_vec(),
        means: total.0.iter().map(MomentAccumulator::stats).collect(),
        covs: total.1.iter().map(PairAccumulator::stats).collect(),
    })
}

/// Variance-curve output of a zero-service experiment; the schema mirrors
/// the simulator so the two can be compared column by column.
#[derive(Debug, Clone)]
pub struct OracleRun {
    pub grid: Vec<f64>,
    pub flows: Vec<FlowId>,
    pub replications: u64,
    /// Flow-major: `flow_stats[flow_pos * grid.len() + grid_pos]`.
    pub flow_stats: Vec<ValueStats>,
    /// Queue-major mean of the zero-service arrival counts.
    pub arrival_mean: Vec<f64>,
    /// Covariance estimates at the last grid point for the requested
    /// flow pairs.
    pub pair_stats: Vec<(FlowId, FlowId, CovStats)>,
}

impl OracleRun {
    pub fn flow_stat(&self, flow_pos: usize, grid_pos: usize) -> &ValueStats {
        &self.flow_stats[flow_pos * self.grid.len() + grid_pos]
    }
}

/// Counts produced by one zero-service replication.
struct ZeroServiceCounts {
    /// Tracked-flow-major by grid point.
    flows: Vec<u64>,
    /// Queue-major by grid point.
    arrivals: Vec<u64>,
}

#[allow(clippy::too_many_arguments)]
fn zero_service_replication(
    sampler: &RoutingSampler,
    arrivals: &[Option<Distribution>],
    horizon: f64,
    grid: &[f64],
    tracked: &[FlowId],
    seed: u64,
    rep: u64,
    cap: u64,
) -> Result<ZeroServiceCounts, OracleError> {
    let k = sampler.k;
    let g = grid.len();
    let mut flows = vec![0u64; tracked.len() * g];
    let mut queue_counts = vec![0u64; k * g];
    let mut scratch = TourScratch::new(k);
    let tracked_idx: Vec<usize> = tracked.iter().map(|f| f.index(k)).collect();

    let mut running_flows = vec![0u64; tracked.len()];
    let mut running_arrivals = vec![0u64; k];

    for (queue, dist) in arrivals.iter().enumerate() {
        let Some(dist) = dist else { continue };
        running_flows.fill(0);
        running_arrivals.fill(0);
        let mut rng: ChaCha8Rng = substream(seed, rep, queue as u64);
        let mut t = dist.sample(&mut rng);
        let mut next_grid = 0usize;
        while t <= horizon {
            while next_grid < g && grid[next_grid] < t {
                for (pos, &c) in running_flows.iter().enumerate() {
                    flows[pos * g + next_grid] += c;
                }
                for (q, &c) in running_arrivals.iter().enumerate() {
                    queue_counts[q * g + next_grid] += c;
                }
                next_grid += 1;
            }
            walk_tour(sampler, queue + 1, &mut rng, cap, &mut scratch)?;
            for (pos, &idx) in tracked_idx.iter().enumerate() {
                running_flows[pos] += scratch.transitions[idx];
            }
            for (total, &v) in running_arrivals.iter_mut().zip(&scratch.visits) {
                *total += v;
            }
            t += dist.sample(&mut rng);
        }
        for gp in next_grid..g {
            for (pos, &c) in running_flows.iter().enumerate() {
                flows[pos * g + gp] += c;
            }
            for (q, &c) in running_arrivals.iter().enumerate() {
                queue_counts[q * g + gp] += c;
            }
        }
    }
    Ok(ZeroServiceCounts {
        flows,
        arrivals: queue_counts,
    })
}

/// Run the zero-service experiment: `replications` independent copies of
/// the arrival superposition over `[0, horizon]`, sampled on `grid`.
///
/// `pairs` are tracked at the last grid point; their flows are added to
/// the tracked set automatically.
#[allow(clippy::too_many_arguments)]
pub fn run_zero_service(
    net: &ValidatedNetwork,
    arrivals: &[Option<Distribution>],
    horizon: f64,
    grid: &[f64],
    replications: u64,
    seed: u64,
    tracked: &[FlowId],
    pairs: &[(FlowId, FlowId)],
    threads: Option<usize>,
) -> Result<OracleRun, SimError> {
    crate::sim::check_grid(horizon, grid, replications)?;
    if arrivals.len() != net.k() {
        return Err(SimError::BadConfig(format!(
            "{} arrival distributions for {} queues",
            arrivals.len(),
            net.k()
        )));
    }
    for dist in arrivals.iter().flatten() {
        dist.check().map_err(SimError::BadConfig)?;
    }

    let mut tracked: Vec<FlowId> = tracked.to_vec();
    for (f1, f2) in pairs {
        for f in [*f1, *f2] {
            if !tracked.contains(&f) {
                tracked.push(f);
            }
        }
    }
    for f in &tracked {
        if !f.in_range(net.k()) {
            return Err(SimError::BadConfig(format!("flow {f} out of range")));
        }
    }

    let sampler = RoutingSampler::new(net);
    let g = grid.len();
    let nu_flow = net.nu_flow();

    let mut flow_acc: Vec<MomentAccumulator> = tracked
        .iter()
        .flat_map(|f| {
            let rate = nu_flow[(f.i - 1, f.j - 1)];
            grid.iter()
                .map(move |&t| MomentAccumulator::new((rate * t).round() as i64))
        })
        .collect();
    let mut arrival_acc = vec![SumAccumulator::default(); net.k() * g];
    let mut pair_acc: Vec<PairAccumulator> = pairs
        .iter()
        .map(|(f1, f2)| {
            let t = grid[g - 1];
            let sx = (nu_flow[(f1.i - 1, f1.j - 1)] * t).round() as i64;
            let sy = (nu_flow[(f2.i - 1, f2.j - 1)] * t).round() as i64;
            PairAccumulator::new(sx, sy)
        })
        .collect();

    let tracked_ref = &tracked;
    let pair_pos: Vec<(usize, usize)> = pairs
        .iter()
        .map(|(f1, f2)| {
            let a = tracked.iter().position(|f| f == f1).expect("tracked");
            let b = tracked.iter().position(|f| f == f2).expect("tracked");
            (a, b)
        })
        .collect();

    fold_replications(
        replications,
        threads,
        |rep| {
            zero_service_replication(
                &sampler,
                arrivals,
                horizon,
                grid,
                tracked_ref,
                seed,
                rep,
                DEFAULT_TOUR_STEP_CAP,
            )
        },
        &mut (&mut flow_acc, &mut arrival_acc, &mut pair_acc),
        |(flow_acc, arrival_acc, pair_acc), counts| {
            for (cell, &x) in flow_acc.iter_mut().zip(&counts.flows) {
                cell.add(x);
            }
            for (cell, &x) in arrival_acc.iter_mut().zip(&counts.arrivals) {
                cell.add(x);
            }
            for (acc, &(a, b)) in pair_acc.iter_mut().zip(&pair_pos) {
                acc.add(counts.flows[a * g + g - 1], counts.flows[b * g + g - 1]);
            }
        },
    )?;

    Ok(OracleRun {
        grid: grid.to_vec(),
        flows: tracked,
        replications,
        flow_stats: flow_acc.iter().map(MomentAccumulator::stats).collect(),
        arrival_mean: arrival_acc.iter().map(SumAccumulator::mean).collect(),
        pair_stats: pairs
            .iter()
            .zip(&pair_acc)
            .map(|(&(f1, f2), acc)| (f1, f2, acc.stats()))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::VisitMoments;
    use crate::testnet;

    #[test]
    fn tour_with_no_routing_is_absorbed_immediately() {
        let net = testnet::single(1.0, 1.0, 2.0).validate().unwrap();
        let mut rng = substream(1, 0, 0);
        let tour = sample_tour(&net, 1, &mut rng).unwrap();
        assert_eq!(tour.visits, vec![1]);
        assert_eq!(tour.transitions, vec![0]);
        assert_eq!(tour.exits, vec![1]);
    }

    #[test]
    fn tandem_tour_is_deterministic() {
        let net = testnet::tandem(2.0, 2.0).validate().unwrap();
        let mut rng = substream(1, 0, 0);
        for _ in 0..50 {
            let tour = sample_tour(&net, 1, &mut rng).unwrap();
            assert_eq!(tour.visits, vec![1, 1]);
            assert_eq!(tour.transitions, vec![0, 1, 0, 0]);
            assert_eq!(tour.exits, vec![0, 1]);
        }
    }

    #[test]
    fn tour_length_cap_fires_on_long_walks() {
        // A almost-sure long loop: self-loop with probability 0.999999.
        let net = crate::network::NetworkSpec::new(
            vec![vec![0.999999]],
            vec![1.0],
            vec![1.0],
            vec![1e7],
        )
        .validate()
        .unwrap();
        let mut rng = substream(1, 0, 0);
        let err = sample_tour_capped(&net, 1, &mut rng, 4).unwrap_err();
        assert_eq!(err, OracleError::TourLengthExceeded { start: 1, cap: 4 });
    }

    #[test]
    fn transition_mean_estimates_match_the_moment_route() {
        let net = testnet::six_node().validate().unwrap();
        let vm = VisitMoments::new(&net);
        let flows = [FlowId::new(2, 1), FlowId::new(4, 5)];
        let est = tour_moment_estimates(&net, &flows, &[], 1_000_000, 99, None).unwrap();

        // Start at 2: expected 2 -> 1 transitions are p21 * visits to 2.
        let e = est.mean(2, FlowId::new(2, 1)).unwrap();
        let want = vm.transition_mean(FlowId::new(2, 1))[1];
        assert!((e.estimate - want).abs() <= 3.0 * e.se, "{e:?} vs {want}");

        let e = est.mean(4, FlowId::new(4, 5)).unwrap();
        let want = vm.transition_mean(FlowId::new(4, 5))[3];
        assert!((e.estimate - want).abs() <= 4.0 * e.se, "{e:?} vs {want}");
    }

    #[test]
    fn deterministic_topology_has_zero_tour_variance() {
        let net = testnet::tandem(1.0, 1.0).validate().unwrap();
        let f = FlowId::new(1, 2);
        let est = tour_moment_estimates(&net, &[f], &[(f, f)], 10_000, 5, None).unwrap();
        let mean = est.mean(1, f).unwrap();
        assert_eq!(mean.estimate, 1.0);
        assert_eq!(mean.se, 0.0);
        let cov = est.covariance(1, f, f).unwrap();
        assert_eq!(cov.estimate, 0.0);
    }

    #[test]
    fn loop_pair_covariance_matches_first_step_analysis() {
        // Covariance of the 4->5 and 5->4 counts for tours entering at 4.
        let net = testnet::six_node().validate().unwrap();
        let vm = VisitMoments::new(&net);
        let f1 = FlowId::new(4, 5);
        let f2 = FlowId::new(5, 4);
        let want = vm.covariance(f1, f2)[3];
        let est = tour_moment_estimates(&net, &[f1, f2], &[(f1, f2)], 1_000_000, 42, None)
            .unwrap();
        let got = est.covariance(4, f1, f2).unwrap();
        assert!(
            (got.estimate - want).abs() <= 3.0 * got.se,
            "{got:?} vs {want}"
        );
    }

    #[test]
    fn doubling_tours_shrinks_the_standard_error() {
        let net = testnet::six_node().validate().unwrap();
        let f = FlowId::new(4, 5);
        let a = tour_moment_estimates(&net, &[f], &[], 20_000, 7, None).unwrap();
        let b = tour_moment_estimates(&net, &[f], &[], 40_000, 7, None).unwrap();
        let ratio = b.mean(4, f).unwrap().se / a.mean(4, f).unwrap().se;
        let expected = 1.0 / 2.0_f64.sqrt();
        assert!((ratio - expected).abs() <= 0.2 * expected, "ratio {ratio}");
    }

    #[test]
    fn deterministic_arrivals_launch_exactly_one_tour_per_period() {
        let net = testnet::single(1.0, 0.0, 2.0).validate().unwrap();
        let arrivals = vec![Some(Distribution::deterministic(1.0))];
        let run = run_zero_service(
            &net,
            &arrivals,
            10.0,
            &[5.0, 10.0],
            4,
            123,
            &[],
            &[],
            Some(1),
        )
        .unwrap();
        // Arrivals at 1..=10; the count at t=10 includes the boundary epoch.
        assert_eq!(run.arrival_mean, vec![5.0, 10.0]);
    }

    #[test]
    fn thread_count_does_not_change_oracle_output() {
        let net = testnet::six_node().validate().unwrap();
        let arrivals = vec![
            Some(Distribution::hyperexponential(
                vec![1.0 / 3.0, 2.0 / 3.0],
                vec![0.5, 2.0],
            )),
            Some(Distribution::erlang(2, 8.0)),
            None,
            None,
            None,
            None,
        ];
        let tracked = [FlowId::new(4, 5)];
        let run = |threads| {
            run_zero_service(
                &net, &arrivals, 50.0, &[25.0, 50.0], 200, 7, &tracked, &[], threads,
            )
            .unwrap()
        };
        let a = run(Some(1));
        let b = run(Some(4));
        assert_eq!(a.flow_stats, b.flow_stats);
        assert_eq!(a.arrival_mean, b.arrival_mean);
    }
}
