//! Discrete-event simulation of the queue network.
//!
//! Vehicles of each flow enter as a Poisson stream, pick their whole path
//! at entry, and are served FIFO by one server per queue.

mod ks;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

pub use ks::{inverse_cdf_samples, ks_distance, MIN_KS_SAMPLES};

use crate::error::{Error, Result};
use crate::model::{compute_arrival_rates, ServiceModel, Splits, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BatchSize {
    Constant { size: u32 },
    /// Sizes 1, 2, ... with P(b) = (1 − q)^{b−1} q, mean 1/q.
    Geometric { mean: f64 },
}

impl BatchSize {
    pub fn mean(&self) -> f64 {
        match *self {
            BatchSize::Constant { size } => size as f64,
            BatchSize::Geometric { mean } => mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Recorded vehicles per flow, warmup included.
    pub n_vehicles: usize,
    pub seed: u64,
    /// Fraction of each flow's earliest vehicles left out of the statistics.
    pub warmup_fraction: f64,
    pub batch_size: BatchSize,
    /// Queue length at which the run is declared divergent.
    pub occupancy_cap: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_vehicles: 100_000,
            seed: 42,
            warmup_fraction: 0.1,
            batch_size: BatchSize::Constant { size: 1 },
            occupancy_cap: 1_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0 {
            return Err(Error::Config("n_vehicles must be at least 1".into()));
        }
        if !(0.0..=0.5).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction {} outside [0, 0.5]",
                self.warmup_fraction
            )));
        }
        match self.batch_size {
            BatchSize::Constant { size } if size == 0 => {
                return Err(Error::Config("batch size must be at least 1".into()))
            }
            BatchSize::Geometric { mean } if !(mean >= 1.0 && mean.is_finite()) => {
                return Err(Error::Config(format!("geometric batch mean {mean} below 1")))
            }
            _ => {}
        }
        if self.occupancy_cap == 0 {
            return Err(Error::Config("occupancy_cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: u64,
    pub flow: usize,
    pub path: usize,
    pub entry: f64,
    pub exit: f64,
    /// Σ over queues of waiting plus service time. Equals `exit − entry` up
    /// to rounding, but keeps constant service times exact.
    pub travel_time: f64,
}

/// Per-queue statistics over the measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    /// Fraction of the window the server was busy.
    pub utilization: f64,
    /// Time-averaged number of vehicles present.
    pub mean_occupancy: f64,
    /// Arrivals per unit time.
    pub arrival_rate: f64,
    /// Mean time in the queue of vehicles arriving in the window.
    pub mean_sojourn: f64,
    pub arrivals: u64,
}

impl QueueStats {
    /// |L − λ̂ W| / L, zero for an idle queue.
    pub fn little_residual(&self) -> f64 {
        if self.mean_occupancy <= 0.0 {
            return 0.0;
        }
        (self.mean_occupancy - self.arrival_rate * self.mean_sojourn).abs() / self.mean_occupancy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Vehicles kept after warmup, ordered by id (= entry order).
    pub vehicles: Vec<VehicleRecord>,
    /// Travel times per path.
    pub path_samples: Vec<Vec<f64>>,
    /// Travel times per flow.
    pub flow_samples: Vec<Vec<f64>>,
    /// δ̂_w(ω^{κ(w)}); zero for a path without samples.
    pub path_delta: Vec<f64>,
    /// δ̂^k(ω^k).
    pub flow_delta: Vec<f64>,
    pub queue_stats: Vec<QueueStats>,
    /// Start and end of the window behind `queue_stats`.
    pub window: (f64, f64),
}

impl SimResult {
    /// Share of each path among its flow's kept vehicles.
    pub fn path_shares(&self, topology: &Topology) -> Vec<f64> {
        topology
            .paths
            .iter()
            .map(|p| {
                let total = self.flow_samples[p.flow].len();
                if total == 0 {
                    0.0
                } else {
                    self.path_samples[p.id].len() as f64 / total as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Source(usize),
    Departure(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event, then the first scheduled
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Vehicle {
    flow: usize,
    path: usize,
    hop: usize,
    entry: f64,
    queue_entry: f64,
    service_start: f64,
    service: f64,
    elapsed: f64,
    /// Index among the flow's recorded vehicles, if recorded.
    recorded: Option<usize>,
}

#[derive(Default, Clone)]
struct QueueState {
    waiting: VecDeque<usize>,
    last_change: f64,
    area: f64,
    busy: f64,
    arrivals: u64,
    sojourn_sum: f64,
    sojourn_count: u64,
}

struct Engine<'a> {
    topology: &'a Topology,
    config: &'a SimConfig,
    rng: ChaCha8Rng,
    events: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    window: (f64, f64),
    vehicles: Vec<Vehicle>,
    free: Vec<usize>,
    queues: Vec<QueueState>,
    cumulative: Vec<Vec<(usize, f64)>>,
    exits: Vec<Vec<Option<VehicleRecord>>>,
    generated: Vec<usize>,
    next_id: u64,
    ids: Vec<u64>,
}

impl Engine<'_> {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event { time, seq: self.seq, kind });
    }

    /// Integrates occupancy and busy time over the window up to `now`.
    fn account(&mut self, q: usize) {
        let (lo, hi) = self.window;
        let state = &mut self.queues[q];
        let a = state.last_change.max(lo);
        let b = self.now.min(hi);
        if b > a {
            let n = state.waiting.len();
            state.area += n as f64 * (b - a);
            if n > 0 {
                state.busy += b - a;
            }
        }
        state.last_change = self.now;
    }

    fn in_window(&self, t: f64) -> bool {
        t >= self.window.0 && t < self.window.1
    }

    fn service_time(&mut self, q: usize) -> f64 {
        let queue = &self.topology.queues[q];
        match queue.service {
            ServiceModel::Markovian => Exp::new(queue.mu).expect("positive rate").sample(&mut self.rng),
            ServiceModel::Deterministic => 1.0 / queue.mu,
        }
    }

    fn arrive(&mut self, v: usize, q: usize) -> Result<()> {
        self.account(q);
        self.vehicles[v].queue_entry = self.now;
        let len = {
            let state = &mut self.queues[q];
            state.waiting.push_back(v);
            state.waiting.len()
        };
        if self.in_window(self.now) {
            self.queues[q].arrivals += 1;
        }
        if len > self.config.occupancy_cap {
            return Err(Error::Diverged {
                queue: self.topology.queues[q].id.clone(),
                occupancy: len,
                cap: self.config.occupancy_cap,
            });
        }
        if len == 1 {
            self.start_service(v, q);
        }
        Ok(())
    }

    fn start_service(&mut self, v: usize, q: usize) {
        let s = self.service_time(q);
        self.vehicles[v].service_start = self.now;
        self.vehicles[v].service = s;
        self.schedule(self.now + s, EventKind::Departure(q));
    }

    fn pick_path(&mut self, flow: usize) -> usize {
        let u: f64 = self.rng.random();
        let table = &self.cumulative[flow];
        table
            .iter()
            .find(|&&(_, c)| u < c)
            .unwrap_or_else(|| table.last().expect("flow has a path with positive split"))
            .0
    }

    fn source(&mut self, flow: usize) -> Result<()> {
        let n = self.config.n_vehicles;
        let batch = match self.config.batch_size {
            BatchSize::Constant { size } => size as usize,
            BatchSize::Geometric { mean } => {
                1 + Geometric::new(1.0 / mean).expect("valid probability").sample(&mut self.rng) as usize
            }
        };
        for _ in 0..batch {
            let path = self.pick_path(flow);
            let recorded = (self.generated[flow] < n).then_some(self.generated[flow]);
            self.generated[flow] += 1;
            let vehicle = Vehicle {
                flow,
                path,
                hop: 0,
                entry: self.now,
                queue_entry: self.now,
                service_start: self.now,
                service: 0.0,
                elapsed: 0.0,
                recorded,
            };
            let v = match self.free.pop() {
                Some(slot) => {
                    self.vehicles[slot] = vehicle;
                    slot
                }
                None => {
                    self.vehicles.push(vehicle);
                    self.ids.push(0);
                    self.vehicles.len() - 1
                }
            };
            self.ids[v] = self.next_id;
            self.next_id += 1;
            let first = self.topology.paths[path].queues[0];
            self.arrive(v, first)?;
        }
        if self.generated.iter().any(|&g| g < n) {
            let rate = self.topology.flows[flow].rate / self.config.batch_size.mean();
            let gap = Exp::new(rate).expect("positive rate").sample(&mut self.rng);
            self.schedule(self.now + gap, EventKind::Source(flow));
        } else if self.window.1.is_infinite() {
            self.window.1 = self.now;
        }
        Ok(())
    }

    fn depart(&mut self, q: usize) -> Result<()> {
        self.account(q);
        let v = self.queues[q].waiting.pop_front().expect("departure from a busy queue");
        let vehicle = &mut self.vehicles[v];
        let entered = vehicle.queue_entry;
        let sojourn = (vehicle.service_start - entered) + vehicle.service;
        vehicle.elapsed += sojourn;
        if self.in_window(entered) {
            self.queues[q].sojourn_sum += sojourn;
            self.queues[q].sojourn_count += 1;
        }
        if let Some(&next) = self.queues[q].waiting.front() {
            self.start_service(next, q);
        }

        let path = &self.topology.paths[self.vehicles[v].path];
        self.vehicles[v].hop += 1;
        if let Some(&next) = path.queues.get(self.vehicles[v].hop) {
            return self.arrive(v, next);
        }
        let vehicle = &self.vehicles[v];
        if let Some(i) = vehicle.recorded {
            self.exits[vehicle.flow][i] = Some(VehicleRecord {
                id: self.ids[v],
                flow: vehicle.flow,
                path: vehicle.path,
                entry: vehicle.entry,
                exit: self.now,
                travel_time: vehicle.elapsed,
            });
        }
        self.free.push(v);
        Ok(())
    }
}

/// Runs the network under `splits` until every vehicle has left.
///
/// The first `n_vehicles` of each flow are recorded. Sources keep running
/// until every flow has produced that many, so later vehicles act as
/// background traffic. Queue statistics cover arrivals between the end of
/// warmup and the moment the sources stop.
pub fn simulate(topology: &Topology, splits: &Splits, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    compute_arrival_rates(topology, splits, true)?;

    let mut cumulative = Vec::with_capacity(topology.flows.len());
    for k in 0..topology.flows.len() {
        let mut acc = 0.0;
        let table: Vec<(usize, f64)> = topology
            .flow_paths(k)
            .iter()
            .filter(|&&w| splits.get(w) > 0.0)
            .map(|&w| {
                acc += splits.get(w);
                (w, acc)
            })
            .collect();
        if table.is_empty() {
            return Err(Error::Infeasible(format!(
                "flow `{}` has no path with positive split",
                topology.flows[k].id
            )));
        }
        cumulative.push(table);
    }

    let n = config.n_vehicles;
    // the window opens once the slowest flow is past its warmup vehicles
    let min_rate = topology.flows.iter().map(|f| f.rate).fold(f64::INFINITY, f64::min);
    let warm_start = if min_rate.is_finite() {
        config.warmup_fraction * n as f64 / min_rate
    } else {
        0.0
    };

    let mut engine = Engine {
        topology,
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        events: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        window: (warm_start, f64::INFINITY),
        vehicles: Vec::new(),
        free: Vec::new(),
        queues: vec![QueueState::default(); topology.queues.len()],
        cumulative,
        exits: vec![vec![None; n]; topology.flows.len()],
        generated: vec![0; topology.flows.len()],
        next_id: 0,
        ids: Vec::new(),
    };
    for k in 0..topology.flows.len() {
        let rate = topology.flows[k].rate / config.batch_size.mean();
        let gap = Exp::new(rate).expect("positive rate").sample(&mut engine.rng);
        engine.schedule(gap, EventKind::Source(k));
    }
    while let Some(event) = engine.events.pop() {
        engine.now = event.time;
        match event.kind {
            EventKind::Source(k) => engine.source(k)?,
            EventKind::Departure(q) => engine.depart(q)?,
        }
    }
    if engine.window.1.is_infinite() {
        engine.window.1 = engine.now;
    }

    let skip = (config.warmup_fraction * n as f64).floor() as usize;
    let mut vehicles: Vec<VehicleRecord> = engine
        .exits
        .iter()
        .flat_map(|records| records.iter().skip(skip).flatten().copied())
        .collect();
    vehicles.sort_by_key(|v| v.id);

    let mut path_samples = vec![Vec::new(); topology.paths.len()];
    let mut flow_samples = vec![Vec::new(); topology.flows.len()];
    for v in &vehicles {
        path_samples[v.path].push(v.travel_time);
        flow_samples[v.flow].push(v.travel_time);
    }
    let exceed = |samples: &[f64], omega: f64| {
        if samples.is_empty() {
            0.0
        } else {
            samples.iter().filter(|&&t| t > omega).count() as f64 / samples.len() as f64
        }
    };
    let path_delta = topology
        .paths
        .iter()
        .map(|p| exceed(&path_samples[p.id], topology.flows[p.flow].omega))
        .collect();
    let flow_delta = topology
        .flows
        .iter()
        .enumerate()
        .map(|(k, f)| exceed(&flow_samples[k], f.omega))
        .collect();

    let (lo, hi) = engine.window;
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let queue_stats = engine
        .queues
        .iter()
        .map(|s| QueueStats {
            utilization: s.busy / span,
            mean_occupancy: s.area / span,
            arrival_rate: s.arrivals as f64 / span,
            mean_sojourn: if s.sojourn_count == 0 {
                0.0
            } else {
                s.sojourn_sum / s.sojourn_count as f64
            },
            arrivals: s.arrivals,
        })
        .collect();

    Ok(SimResult {
        vehicles,
        path_samples,
        flow_samples,
        path_delta,
        flow_delta,
        queue_stats,
        window: engine.window,
    })
}
