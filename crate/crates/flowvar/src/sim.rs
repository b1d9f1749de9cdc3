//! Discrete-event simulation of the queueing network.
//!
//! Renewal exogenous arrivals, general service distributions drawn at
//! service start, Bernoulli routing drawn at completion, and
//! work-conserving servers (dedicated FIFO or shared with non-preemptive
//! priority). The engine tracks the inter-queue flow counters on a time
//! grid so the empirical variance curves can be compared against the
//! analytic slopes.
//!
//! Conventions, fixed for reproducibility:
//! * counting processes are right-continuous: an event at exactly time
//!   `t` is included in counts at `t`;
//! * simultaneous events run completions first, then arrivals, then by
//!   queue index, then in insertion order;
//! * the first inter-arrival time of every stream is a fresh draw at
//!   time zero (the system starts empty).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::Distribution;
use crate::error::{InputError, SimError};
use crate::network::{FlowId, NetworkSpec, ServerGroup, ValidatedNetwork};
use crate::oracle::RoutingSampler;
use crate::rng::{substream, LANES_PER_REPLICATION};
use crate::runner::fold_replications;
use crate::stats::{MomentAccumulator, SumAccumulator, ValueStats};

/// Default cap on processed events per replication.
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

/// Sampling grid of an experiment: either explicit time points or an
/// arithmetic range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Explicit(Vec<f64>),
    Range { from: f64, to: f64, by: f64 },
}

impl GridSpec {
    pub fn expand(&self) -> Vec<f64> {
        match self {
            Self::Explicit(points) => points.clone(),
            Self::Range { from, to, by } => {
                let mut out = Vec::new();
                if *by > 0.0 {
                    let n = ((to - from) / by).round() as i64;
                    for i in 0..=n.max(0) {
                        let t = from + i as f64 * by;
                        if t <= to + 1e-9 * by {
                            out.push(t);
                        }
                    }
                }
                out
            }
        }
    }
}

/// Experiment file: network spec reference plus distributions, policy and
/// run parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentFile {
    /// Path of the network spec JSON, relative to this file.
    pub spec: String,
    /// Per-queue inter-arrival distribution; `null` for queues without
    /// exogenous arrivals.
    pub arrivals: Vec<Option<Distribution>>,
    /// Per-queue service distribution.
    pub services: Vec<Distribution>,
    /// Server partition override; defaults to the spec's partition.
    #[serde(default)]
    pub policy: Option<Vec<ServerGroup>>,
    pub horizon: f64,
    pub grid: GridSpec,
    pub replications: u64,
    pub seed: u64,
}

impl ExperimentFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, InputError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|err| InputError::Malformed {
            path: path.display().to_string(),
            what: "experiment",
            field: err.path().to_string(),
            detail: err.inner().to_string(),
        })
    }

    /// Load the referenced network spec (relative to `base_dir`), apply
    /// the policy override and bundle everything for a run.
    pub fn resolve(self, base_dir: &Path) -> Result<Experiment, InputError> {
        let spec_path = base_dir.join(&self.spec);
        let spec = NetworkSpec::from_json_file(&spec_path)?;
        let mut net = spec.validate().map_err(|source| InputError::Invalid {
            path: spec_path.display().to_string(),
            source,
        })?;
        if let Some(policy) = &self.policy {
            net = net.with_servers(policy).map_err(|source| InputError::Invalid {
                path: spec_path.display().to_string(),
                source,
            })?;
        }
        Ok(Experiment {
            net,
            arrivals: self.arrivals,
            services: self.services,
            horizon: self.horizon,
            grid: self.grid.expand(),
            replications: self.replications,
            seed: self.seed,
        })
    }
}

/// A fully resolved simulation experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub net: ValidatedNetwork,
    pub arrivals: Vec<Option<Distribution>>,
    pub services: Vec<Distribution>,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub replications: u64,
    pub seed: u64,
}

impl Experiment {
    pub fn new(
        net: ValidatedNetwork,
        arrivals: Vec<Option<Distribution>>,
        services: Vec<Distribution>,
        horizon: f64,
        grid: Vec<f64>,
        replications: u64,
        seed: u64,
    ) -> Result<Self, SimError> {
        let exp = Self {
            net,
            arrivals,
            services,
            horizon,
            grid,
            replications,
            seed,
        };
        exp.check()?;
        Ok(exp)
    }

    pub fn check(&self) -> Result<(), SimError> {
        let k = self.net.k();
        check_grid(self.horizon, &self.grid, self.replications)?;
        if self.arrivals.len() != k {
            return Err(SimError::BadConfig(format!(
                "{} arrival distributions for {k} queues",
                self.arrivals.len()
            )));
        }
        if self.services.len() != k {
            return Err(SimError::BadConfig(format!(
                "{} service distributions for {k} queues",
                self.services.len()
            )));
        }
        for dist in self.arrivals.iter().flatten().chain(&self.services) {
            dist.check().map_err(SimError::BadConfig)?;
        }
        for (q, (dist, &alpha)) in self
            .arrivals
            .iter()
            .zip(self.net.spec().alpha.iter())
            .enumerate()
        {
            if dist.is_none() && alpha > 0.0 {
                return Err(SimError::BadConfig(format!(
                    "queue {} has alpha {alpha} but no arrival distribution",
                    q + 1
                )));
            }
        }
        if 3 * k as u64 > LANES_PER_REPLICATION {
            return Err(SimError::BadConfig(format!(
                "K = {k} exceeds the per-replication stream budget"
            )));
        }
        Ok(())
    }

    /// Mismatches between the spec's rate parameters and the moments of
    /// the configured arrival distributions. Informational: the analytic
    /// tables use the spec, the samplers use the distributions.
    pub fn arrival_model_mismatches(&self) -> Vec<String> {
        let mut notes = Vec::new();
        for (q, dist) in self.arrivals.iter().enumerate() {
            let Some(dist) = dist else { continue };
            let alpha = self.net.spec().alpha[q];
            let v2 = self.net.spec().v2[q];
            let rate = 1.0 / dist.mean();
            let var_rate = dist.counting_variance_rate();
            if (rate - alpha).abs() > 1e-6 * alpha.max(1.0) {
                notes.push(format!(
                    "queue {}: arrival rate {rate:.6} vs alpha {alpha:.6}",
                    q + 1
                ));
            }
            if (var_rate - v2).abs() > 1e-6 * v2.max(1.0) {
                notes.push(format!(
                    "queue {}: arrival variance rate {var_rate:.6} vs v2 {v2:.6}",
                    q + 1
                ));
            }
        }
        notes
    }
}

pub(crate) fn check_grid(horizon: f64, grid: &[f64], replications: u64) -> Result<(), SimError> {
    if replications == 0 {
        return Err(SimError::BadConfig("replications must be >= 1".into()));
    }
    if horizon.is_nan() || horizon <= 0.0 {
        return Err(SimError::BadConfig(format!("horizon {horizon} must be > 0")));
    }
    if grid.is_empty() {
        return Err(SimError::BadConfig("grid is empty".into()));
    }
    let mut prev = 0.0;
    for &t in grid {
        if t.is_nan() || t <= prev {
            return Err(SimError::BadConfig(format!(
                "grid must be strictly increasing within (0, horizon]; saw {t} after {prev}"
            )));
        }
        prev = t;
    }
    if prev > horizon {
        return Err(SimError::BadConfig(format!(
            "grid point {prev} beyond horizon {horizon}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EvKind {
    Completion = 0,
    Arrival = 1,
}

#[derive(Debug, Clone, Copy)]
struct Ev {
    time: f64,
    kind: EvKind,
    queue: u32,
    seq: u64,
}

impl PartialEq for Ev {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ev {}

impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ev {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| (self.kind as u8).cmp(&(other.kind as u8)))
            .then_with(|| self.queue.cmp(&other.queue))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Busy {
    queue: usize,
    start: f64,
    duration: f64,
}

#[derive(Debug)]
struct ServerRt {
    /// Queues polled in priority order, 0-based.
    order: Vec<usize>,
    busy: Option<Busy>,
    /// Busy time accumulated from event timestamps.
    timeline: f64,
    /// Busy time accumulated from drawn service durations.
    demand: f64,
}

/// Counters produced by one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RepCounts {
    /// Tracked-flow-major by grid point.
    pub flow_counts: Vec<u64>,
    /// Queue-major by grid point: queue length.
    pub queue_lengths: Vec<u64>,
    /// Queue-major by grid point: total arrivals (exogenous plus
    /// internal).
    pub arrival_counts: Vec<u64>,
    /// Queue-major by grid point: total departures (all destinations,
    /// outside included).
    pub departure_counts: Vec<u64>,
    /// Per server: busy time from the event timeline and from summed
    /// service demand. Equal up to rounding when the engine is sound.
    pub server_busy: Vec<(f64, f64)>,
    pub events: u64,
}

/// Run one replication. `rep` selects the random substreams under the
/// experiment seed.
pub fn run_replication(
    exp: &Experiment,
    tracked: &[FlowId],
    rep: u64,
    event_cap: u64,
    force: bool,
) -> Result<RepCounts, SimError> {
    if !force {
        if let Some(s) = exp.net.stability_report().iter().find(|s| !s.stable) {
            return Err(SimError::UnstableRefused {
                server: s.server,
                load: s.load,
            });
        }
    }
    exp.check()?;
    let sampler = RoutingSampler::new(&exp.net);
    run_replication_inner(exp, &sampler, tracked, rep, event_cap)
}

fn run_replication_inner(
    exp: &Experiment,
    sampler: &RoutingSampler,
    tracked: &[FlowId],
    rep: u64,
    event_cap: u64,
) -> Result<RepCounts, SimError> {
    let net = &exp.net;
    let k = net.k();
    let g = exp.grid.len();
    let horizon = exp.horizon;
    let kw = k + 1; // flow-matrix row width, column 0 is the outside

    let mut arr_rng: Vec<Option<ChaCha8Rng>> = (0..k)
        .map(|q| {
            exp.arrivals[q]
                .as_ref()
                .map(|_| substream(exp.seed, rep, q as u64))
        })
        .collect();
    let mut svc_rng: Vec<ChaCha8Rng> = (0..k)
        .map(|q| substream(exp.seed, rep, (k + q) as u64))
        .collect();
    let mut route_rng: Vec<ChaCha8Rng> = (0..k)
        .map(|q| substream(exp.seed, rep, (2 * k + q) as u64))
        .collect();

    let mut servers: Vec<ServerRt> = net
        .servers()
        .iter()
        .map(|grp| ServerRt {
            order: grp.polling_order().iter().map(|&q| q - 1).collect(),
            busy: None,
            timeline: 0.0,
            demand: 0.0,
        })
        .collect();
    let mut server_of = vec![usize::MAX; k];
    for (s, srv) in servers.iter().enumerate() {
        for &q in &srv.order {
            server_of[q] = s;
        }
    }

    let mut heap: BinaryHeap<std::cmp::Reverse<Ev>> = BinaryHeap::new();
    let mut seq = 0u64;
    let push = |heap: &mut BinaryHeap<std::cmp::Reverse<Ev>>,
                    seq: &mut u64,
                    time: f64,
                    kind: EvKind,
                    queue: usize| {
        if time <= horizon {
            heap.push(std::cmp::Reverse(Ev {
                time,
                kind,
                queue: queue as u32,
                seq: *seq,
            }));
            *seq += 1;
        }
    };

    for (q, rng) in arr_rng.iter_mut().enumerate() {
        if let (Some(dist), Some(rng)) = (&exp.arrivals[q], rng.as_mut()) {
            let t = dist.sample(rng);
            push(&mut heap, &mut seq, t, EvKind::Arrival, q);
        }
    }

    let mut q_len = vec![0u64; k];
    let mut a_count = vec![0u64; k];
    let mut d_count = vec![0u64; k * kw];
    let mut served = vec![0u64; k];

    let tracked_at = |d: &[u64], f: &FlowId| d[(f.i - 1) * kw + f.j];

    let mut flow_counts = vec![0u64; tracked.len() * g];
    let mut queue_lengths = vec![0u64; k * g];
    let mut arrival_counts = vec![0u64; k * g];
    let mut departure_counts = vec![0u64; k * g];

    let snapshot = |gp: usize,
                        q_len: &[u64],
                        a_count: &[u64],
                        d_count: &[u64],
                        served: &[u64],
                        servers: &[ServerRt],
                        flow_counts: &mut [u64],
                        queue_lengths: &mut [u64],
                        arrival_counts: &mut [u64],
                        departure_counts: &mut [u64]|
     -> Result<(), SimError> {
        let t = exp.grid[gp];
        for q in 0..k {
            let inbound: u64 = (0..k).map(|i| d_count[i * kw + q + 1]).sum();
            let outbound: u64 = (0..=k).map(|j| d_count[q * kw + j]).sum();
            let expect = a_count[q] + inbound - outbound;
            if q_len[q] != expect {
                return Err(SimError::ConservationViolated {
                    t,
                    queue: q + 1,
                    detail: format!(
                        "queue length {} but arrivals - departures = {expect}",
                        q_len[q]
                    ),
                });
            }
            if outbound != served[q] {
                return Err(SimError::ConservationViolated {
                    t,
                    queue: q + 1,
                    detail: format!("routing counts {outbound} but {} jobs served", served[q]),
                });
            }
            arrival_counts[q * g + gp] = a_count[q] + inbound;
            queue_lengths[q * g + gp] = q_len[q];
            departure_counts[q * g + gp] = outbound;
        }
        for (s, srv) in servers.iter().enumerate() {
            if srv.busy.is_none() && srv.order.iter().any(|&q| q_len[q] > 0) {
                return Err(SimError::ConservationViolated {
                    t,
                    queue: srv.order[0] + 1,
                    detail: format!("server {} idles with work waiting", s + 1),
                });
            }
        }
        for (pos, f) in tracked.iter().enumerate() {
            flow_counts[pos * g + gp] = tracked_at(d_count, f);
        }
        Ok(())
    };

    let try_start = |servers: &mut [ServerRt],
                     svc_rng: &mut [ChaCha8Rng],
                     heap: &mut BinaryHeap<std::cmp::Reverse<Ev>>,
                     seq: &mut u64,
                     q_len: &[u64],
                     s: usize,
                     now: f64| {
        let srv = &mut servers[s];
        if srv.busy.is_some() {
            return;
        }
        for &q in &srv.order {
            if q_len[q] > 0 {
                let duration = exp.services[q].sample(&mut svc_rng[q]);
                srv.busy = Some(Busy {
                    queue: q,
                    start: now,
                    duration,
                });
                let end = now + duration;
                if end <= horizon {
                    heap.push(std::cmp::Reverse(Ev {
                        time: end,
                        kind: EvKind::Completion,
                        queue: q as u32,
                        seq: *seq,
                    }));
                    *seq += 1;
                }
                return;
            }
        }
    };

    let mut next_grid = 0usize;
    let mut events = 0u64;

    while let Some(std::cmp::Reverse(ev)) = heap.peek().copied() {
        while next_grid < g && exp.grid[next_grid] < ev.time {
            snapshot(
                next_grid,
                &q_len,
                &a_count,
                &d_count,
                &served,
                &servers,
                &mut flow_counts,
                &mut queue_lengths,
                &mut arrival_counts,
                &mut departure_counts,
            )?;
            next_grid += 1;
        }
        heap.pop();
        events += 1;
        if events > event_cap {
            return Err(SimError::EventQueueOverflow { cap: event_cap });
        }
        let q = ev.queue as usize;
        match ev.kind {
            EvKind::Arrival => {
                a_count[q] += 1;
                q_len[q] += 1;
                let dist = exp.arrivals[q].as_ref().expect("arrival without stream");
                let rng = arr_rng[q].as_mut().expect("arrival without stream");
                let next = ev.time + dist.sample(rng);
                push(&mut heap, &mut seq, next, EvKind::Arrival, q);
                try_start(
                    &mut servers,
                    &mut svc_rng,
                    &mut heap,
                    &mut seq,
                    &q_len,
                    server_of[q],
                    ev.time,
                );
            }
            EvKind::Completion => {
                let s = server_of[q];
                let busy = servers[s].busy.take().expect("completion on idle server");
                debug_assert_eq!(busy.queue, q);
                servers[s].timeline += ev.time - busy.start;
                servers[s].demand += busy.duration;
                served[q] += 1;
                q_len[q] -= 1;
                match sampler.next(q, &mut route_rng[q]) {
                    Some(j) => {
                        d_count[q * kw + j + 1] += 1;
                        q_len[j] += 1;
                        try_start(
                            &mut servers,
                            &mut svc_rng,
                            &mut heap,
                            &mut seq,
                            &q_len,
                            server_of[j],
                            ev.time,
                        );
                    }
                    None => {
                        d_count[q * kw] += 1;
                    }
                }
                try_start(
                    &mut servers,
                    &mut svc_rng,
                    &mut heap,
                    &mut seq,
                    &q_len,
                    s,
                    ev.time,
                );
            }
        }
    }

    for gp in next_grid..g {
        snapshot(
            gp,
            &q_len,
            &a_count,
            &d_count,
            &served,
            &servers,
            &mut flow_counts,
            &mut queue_lengths,
            &mut arrival_counts,
            &mut departure_counts,
        )?;
    }

    let server_busy = servers
        .iter()
        .map(|srv| {
            let in_flight = srv.busy.map_or(0.0, |b| horizon - b.start);
            (srv.timeline + in_flight, srv.demand + in_flight)
        })
        .collect();

    Ok(RepCounts {
        flow_counts,
        queue_lengths,
        arrival_counts,
        departure_counts,
        server_busy,
        events,
    })
}

/// Aggregated experiment output.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub grid: Vec<f64>,
    pub flows: Vec<FlowId>,
    pub replications: u64,
    /// Flow-major by grid point.
    pub flow_stats: Vec<ValueStats>,
    /// Queue-major by grid point: mean queue length across replications.
    pub queue_mean: Vec<f64>,
    /// Queue-major by grid point: mean squared queue length, the raw
    /// ingredient of the `E[Q^2]/t` diagnostic.
    pub queue_mean_square: Vec<f64>,
    /// Queue-major by grid point: mean total arrivals.
    pub arrival_mean: Vec<f64>,
}

impl SimOutput {
    pub fn flow_stat(&self, flow_pos: usize, grid_pos: usize) -> &ValueStats {
        &self.flow_stats[flow_pos * self.grid.len() + grid_pos]
    }
}

/// Options of [`run_experiment`] beyond the experiment file itself.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Run even when a server load is at or above one.
    pub force: bool,
    /// Worker cap; `Some(1)` forces a sequential run.
    pub threads: Option<usize>,
    /// Cap on processed events per replication.
    pub event_cap: Option<u64>,
}

/// Run the full experiment: independent replications with derived seeds,
/// aggregated into per-grid-point variance estimates for the tracked
/// flows.
pub fn run_experiment(
    exp: &Experiment,
    tracked: &[FlowId],
    opts: &SimOptions,
) -> Result<SimOutput, SimError> {
    exp.check()?;
    if !opts.force {
        if let Some(s) = exp.net.stability_report().iter().find(|s| !s.stable) {
            return Err(SimError::UnstableRefused {
                server: s.server,
                load: s.load,
            });
        }
    }
    for f in tracked {
        if !f.in_range(exp.net.k()) {
            return Err(SimError::BadConfig(format!("flow {f} out of range")));
        }
    }
    let event_cap = opts.event_cap.unwrap_or(DEFAULT_EVENT_CAP);
    let sampler = RoutingSampler::new(&exp.net);
    let k = exp.net.k();
    let g = exp.grid.len();
    let nu_flow = exp.net.nu_flow();

    let mut flow_acc: Vec<MomentAccumulator> = tracked
        .iter()
        .flat_map(|f| {
            let rate = nu_flow[(f.i - 1, f.j - 1)];
            exp.grid
                .iter()
                .map(move |&t| MomentAccumulator::new((rate * t).round() as i64))
        })
        .collect();
    let mut queue_acc = vec![SumAccumulator::default(); k * g];
    let mut arrival_acc = vec![SumAccumulator::default(); k * g];

    fold_replications(
        exp.replications,
        opts.threads,
        |rep| run_replication_inner(exp, &sampler, tracked, rep, event_cap),
        &mut (&mut flow_acc, &mut queue_acc, &mut arrival_acc),
        |(flow_acc, queue_acc, arrival_acc), rep: RepCounts| {
            for (cell, &x) in flow_acc.iter_mut().zip(&rep.flow_counts) {
                cell.add(x);
            }
            for (cell, &x) in queue_acc.iter_mut().zip(&rep.queue_lengths) {
                cell.add(x);
            }
            for (cell, &x) in arrival_acc.iter_mut().zip(&rep.arrival_counts) {
                cell.add(x);
            }
        },
    )?;

    Ok(SimOutput {
        grid: exp.grid.clone(),
        flows: tracked.to_vec(),
        replications: exp.replications,
        flow_stats: flow_acc.iter().map(MomentAccumulator::stats).collect(),
        queue_mean: queue_acc.iter().map(SumAccumulator::mean).collect(),
        queue_mean_square: queue_acc.iter().map(SumAccumulator::mean_square).collect(),
        arrival_mean: arrival_acc.iter().map(SumAccumulator::mean).collect(),
    })
}
