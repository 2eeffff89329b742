//! Road topology as a network of single-server queues.
//!
//! A [`Topology`] is loaded from a JSON document, validated, and then has its
//! paths enumerated: for every flow, all simple directed routes from the
//! flow's ingress queue to its egress queue. Path-split probabilities live in
//! a separate [`Splits`] vector indexed by path, so the optimizer can work on
//! private copies while the topology stays immutable.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator used in path signatures such as `q2-q3-q5`.
pub const SIGNATURE_SEPARATOR: char = '-';

/// Tolerance on Σ p = 1 accepted for user-supplied splits before they are
/// renormalized.
const SPLIT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServiceModel {
    /// Exponential service times (M/M/1).
    #[serde(rename = "M")]
    Markovian,
    /// Constant service time 1/μ (M/D/1).
    #[serde(rename = "D")]
    Deterministic,
}

/// One road segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadQueue {
    pub id: String,
    pub service: ServiceModel,
    pub mu_max: f64,
    /// Service rate in use. Fixed to `mu_max`.
    pub mu: f64,
}

/// Directed link between two queues. `alpha_fixed` pins the transition
/// probability of the link for every flow that uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub alpha_fixed: Option<f64>,
    /// Flows allowed on this link; `None` means every flow.
    pub flows: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub id: String,
    pub ingress: usize,
    pub egress: usize,
    /// Λ^k, vehicles per time unit entering at `ingress`.
    pub rate: f64,
    /// Target travel time ω^k.
    pub omega: f64,
}

impl Flow {
    /// Rate at which the flow leaves the topology; equals the ingress rate at
    /// stationarity.
    pub fn egress_rate(&self) -> f64 {
        self.rate
    }
}

/// A route owned by exactly one flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub id: usize,
    pub flow: usize,
    pub queues: Vec<usize>,
    /// Initial split probability.
    pub p: f64,
}

impl Path {
    pub fn contains(&self, queue: usize) -> bool {
        self.queues.contains(&queue)
    }

    /// Consecutive queue pairs along the path.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.queues.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Path-split probabilities, indexed by path id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits(pub Vec<f64>);

impl Splits {
    pub fn get(&self, path: usize) -> f64 {
        self.0[path]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Σ_w p_w for the paths of `flow`.
    pub fn flow_sum(&self, topology: &Topology, flow: usize) -> f64 {
        topology.flow_paths(flow).iter().map(|&w| self.0[w]).sum()
    }
}

/// Edge-level transition probabilities α_{i,j}, keyed by (from, to) queue index.
pub type EdgeAlphas = BTreeMap<(usize, usize), f64>;

/// Per-queue arrival rates λ_i.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalRates {
    pub lambda: Vec<f64>,
}

impl ArrivalRates {
    /// Service-rate margin μ_i − λ_i.
    pub fn slack(&self, topology: &Topology, queue: usize) -> f64 {
        topology.queues[queue].mu - self.lambda[queue]
    }

    /// Probability the queue is empty, 1 − λ/μ.
    pub fn pi0(&self, topology: &Topology, queue: usize) -> f64 {
        1.0 - self.lambda[queue] / topology.queues[queue].mu
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub queues: Vec<RoadQueue>,
    pub edges: Vec<Edge>,
    pub flows: Vec<Flow>,
    pub paths: Vec<Path>,
    flow_paths: Vec<Vec<usize>>,
    requested_splits: Option<SplitMap>,
}

/// `{flow_id: {path_signature: p}}`, the on-disk form of a split vector.
pub type SplitMap = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    queues: Vec<QueueDoc>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
    #[serde(default)]
    flows: Vec<FlowDoc>,
    #[serde(default)]
    initial_splits: Option<SplitMap>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueueDoc {
    id: String,
    mu_max: f64,
    service: ServiceModel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    from: String,
    to: String,
    #[serde(default)]
    alpha_fixed: Option<f64>,
    #[serde(default)]
    flows: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowDoc {
    id: String,
    ingress: String,
    egress: String,
    rate: f64,
    omega: f64,
}

fn check_positive(id: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::NonpositiveRate {
            id: id.to_string(),
            value,
        })
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(SIGNATURE_SEPARATOR) || id.contains('>') {
        return Err(Error::Schema {
            id: id.to_string(),
            msg: format!("ids must be nonempty and must not contain `{SIGNATURE_SEPARATOR}` or `>`"),
        });
    }
    Ok(())
}

/// Parses and validates a topology document. Paths are not enumerated yet.
pub fn load_topology(source: &str) -> Result<Topology> {
    let doc: TopologyDoc =
        serde_json::from_str(source).map_err(|e| Error::Parse(e.to_string()))?;

    let mut index = HashMap::new();
    let mut queues = Vec::with_capacity(doc.queues.len());
    for q in doc.queues {
        check_id(&q.id)?;
        check_positive(&q.id, q.mu_max)?;
        if index.insert(q.id.clone(), queues.len()).is_some() {
            return Err(Error::DuplicateId(q.id));
        }
        queues.push(RoadQueue {
            mu: q.mu_max,
            id: q.id,
            service: q.service,
            mu_max: q.mu_max,
        });
    }

    let lookup = |owner: &str, target: &str| -> Result<usize> {
        index
            .get(target)
            .copied()
            .ok_or_else(|| Error::DanglingReference {
                owner: owner.to_string(),
                target: target.to_string(),
            })
    };

    let mut edges = Vec::with_capacity(doc.edges.len());
    let mut restrictions = Vec::with_capacity(doc.edges.len());
    let mut seen_edges = HashSet::new();
    for e in doc.edges {
        let name = format!("{}->{}", e.from, e.to);
        let from = lookup(&name, &e.from)?;
        let to = lookup(&name, &e.to)?;
        if from == to {
            return Err(Error::Schema {
                id: name,
                msg: "self-loop".into(),
            });
        }
        if !seen_edges.insert((from, to)) {
            return Err(Error::DuplicateId(name));
        }
        if let Some(a) = e.alpha_fixed {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Schema {
                    id: name,
                    msg: format!("alpha_fixed {a} outside [0, 1]"),
                });
            }
        }
        edges.push(Edge {
            from,
            to,
            alpha_fixed: e.alpha_fixed,
            flows: None,
        });
        restrictions.push((name, e.flows));
    }

    let mut flows = Vec::with_capacity(doc.flows.len());
    let mut flow_ids = HashSet::new();
    for f in doc.flows {
        check_id(&f.id)?;
        if !flow_ids.insert(f.id.clone()) {
            return Err(Error::DuplicateId(f.id));
        }
        check_positive(&f.id, f.rate)?;
        if !(f.omega.is_finite() && f.omega > 0.0) {
            return Err(Error::Schema {
                id: f.id,
                msg: format!("omega must be positive, got {}", f.omega),
            });
        }
        flows.push(Flow {
            ingress: lookup(&f.id, &f.ingress)?,
            egress: lookup(&f.id, &f.egress)?,
            id: f.id,
            rate: f.rate,
            omega: f.omega,
        });
    }

    for (edge, (name, allowed)) in edges.iter_mut().zip(restrictions) {
        if let Some(allowed) = allowed {
            let ids = allowed
                .iter()
                .map(|f| {
                    flows.iter().position(|fl| &fl.id == f).ok_or_else(|| Error::Schema {
                        id: name.clone(),
                        msg: format!("unknown flow `{f}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            edge.flows = Some(ids);
        }
    }

    Ok(Topology {
        queues,
        edges,
        flows,
        paths: Vec::new(),
        flow_paths: Vec::new(),
        requested_splits: doc.initial_splits,
    })
}

/// Reads, validates and enumerates a topology file in one go.
pub fn read_topology(path: impl AsRef<FsPath>) -> Result<Topology> {
    let text = std::fs::read_to_string(path)?;
    load_topology(&text)?.enumerate_paths()
}

impl Topology {
    pub fn queue_index(&self, id: &str) -> Option<usize> {
        self.queues.iter().position(|q| q.id == id)
    }

    pub fn flow_index(&self, id: &str) -> Option<usize> {
        self.flows.iter().position(|f| f.id == id)
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&Edge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    /// Path ids owned by `flow`, in enumeration order.
    pub fn flow_paths(&self, flow: usize) -> &[usize] {
        &self.flow_paths[flow]
    }

    pub fn path_signature(&self, path: usize) -> String {
        let sep = SIGNATURE_SEPARATOR.to_string();
        self.paths[path]
            .queues
            .iter()
            .map(|&q| self.queues[q].id.as_str())
            .collect::<Vec<_>>()
            .join(&sep)
    }

    pub fn path_by_signature(&self, flow: usize, signature: &str) -> Option<usize> {
        self.flow_paths(flow)
            .iter()
            .copied()
            .find(|&w| self.path_signature(w) == signature)
    }

    /// Splits carried by the paths themselves.
    pub fn initial_splits(&self) -> Splits {
        Splits(self.paths.iter().map(|p| p.p).collect())
    }

    pub fn service_rates(&self) -> Vec<f64> {
        self.queues.iter().map(|q| q.mu).collect()
    }

    /// Total number of split degrees of freedom, Σ_k (|W_k| − 1).
    pub fn degrees_of_freedom(&self) -> usize {
        self.flow_paths
            .iter()
            .map(|ws| ws.len().saturating_sub(1))
            .sum()
    }

    /// A copy with every queue switched to `model`.
    pub fn with_service_model(&self, model: ServiceModel) -> Topology {
        let mut t = self.clone();
        for q in &mut t.queues {
            q.service = model;
        }
        t
    }

    fn usable_successors(&self, queue: usize, flow: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |e| {
                e.from == queue
                    && e.alpha_fixed != Some(0.0)
                    && e.flows.as_ref().is_none_or(|fs| fs.contains(&flow))
            })
            .map(|e| e.to)
    }

    fn check_acyclic_from(&self, start: usize, flow: usize) -> Result<()> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.queues.len()];
        let mut stack = vec![(start, self.usable_successors(start, flow).collect::<Vec<_>>())];
        state[start] = 1;
        while let Some((node, succ)) = stack.last_mut() {
            match succ.pop() {
                Some(next) => match state[next] {
                    0 => {
                        state[next] = 1;
                        let s = self.usable_successors(next, flow).collect();
                        stack.push((next, s));
                    }
                    1 => return Err(Error::Cycle(self.queues[next].id.clone())),
                    _ => {}
                },
                None => {
                    state[*node] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    /// Enumerates every simple ingress→egress path of every flow and assigns
    /// initial splits (uniform unless the document overrides them).
    pub fn enumerate_paths(mut self) -> Result<Topology> {
        let mut paths = Vec::new();
        let mut flow_paths = Vec::with_capacity(self.flows.len());
        for (k, flow) in self.flows.iter().enumerate() {
            self.check_acyclic_from(flow.ingress, k)?;
            let mut found = Vec::new();
            let mut route = vec![flow.ingress];
            self.collect_routes(k, flow.egress, &mut route, &mut found);
            if found.is_empty() {
                return Err(Error::Unreachable(flow.id.clone()));
            }
            let share = 1.0 / found.len() as f64;
            let mut ids = Vec::with_capacity(found.len());
            for queues in found {
                ids.push(paths.len());
                paths.push(Path {
                    id: paths.len(),
                    flow: k,
                    queues,
                    p: share,
                });
            }
            flow_paths.push(ids);
        }
        self.paths = paths;
        self.flow_paths = flow_paths;

        if let Some(requested) = self.requested_splits.take() {
            let splits = self.splits_from_map(&requested)?;
            for (path, p) in self.paths.iter_mut().zip(splits.0) {
                path.p = p;
            }
        }
        Ok(self)
    }

    fn collect_routes(&self, flow: usize, target: usize, route: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let here = *route.last().expect("route starts at the ingress");
        if here == target {
            out.push(route.clone());
            return;
        }
        let next: Vec<usize> = self.usable_successors(here, flow).collect();
        for n in next {
            if route.contains(&n) {
                continue;
            }
            route.push(n);
            self.collect_routes(flow, target, route, out);
            route.pop();
        }
    }

    /// Converts an on-disk split map into a split vector. Flows missing from
    /// the map keep their current splits; listed flows must sum to one.
    pub fn splits_from_map(&self, map: &SplitMap) -> Result<Splits> {
        let mut splits = self.initial_splits();
        for (flow_id, entries) in map {
            let k = self.flow_index(flow_id).ok_or_else(|| Error::Schema {
                id: flow_id.clone(),
                msg: "unknown flow in splits".into(),
            })?;
            for &w in self.flow_paths(k) {
                splits.0[w] = 0.0;
            }
            for (sig, &p) in entries {
                let w = self.path_by_signature(k, sig).ok_or_else(|| Error::Schema {
                    id: sig.clone(),
                    msg: format!("not a path of flow `{flow_id}`"),
                })?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Infeasible(format!(
                        "split {p} for path `{sig}` outside [0, 1]"
                    )));
                }
                splits.0[w] = p;
            }
            let total = splits.flow_sum(self, k);
            if (total - 1.0).abs() > SPLIT_SUM_TOL {
                return Err(Error::Infeasible(format!(
                    "splits of flow `{flow_id}` sum to {total}, expected 1"
                )));
            }
            for &w in self.flow_paths(k) {
                splits.0[w] /= total;
            }
        }
        Ok(splits)
    }

    pub fn splits_to_map(&self, splits: &Splits) -> SplitMap {
        let mut map = SplitMap::new();
        for (k, flow) in self.flows.iter().enumerate() {
            let entry = map.entry(flow.id.clone()).or_default();
            for &w in self.flow_paths(k) {
                entry.insert(self.path_signature(w), splits.0[w]);
            }
        }
        map
    }
}

/// λ_i = Σ_k Λ^k Σ_{w ∋ q_i} p_w^k. With `check_stability`, any queue with
/// λ_i ≥ μ_i is reported as [`Error::Unstable`].
pub fn compute_arrival_rates(
    topology: &Topology,
    splits: &Splits,
    check_stability: bool,
) -> Result<ArrivalRates> {
    let mut lambda = vec![0.0; topology.queues.len()];
    for path in &topology.paths {
        let contribution = topology.flows[path.flow].rate * splits.get(path.id);
        for &q in &path.queues {
            lambda[q] += contribution;
        }
    }
    if check_stability {
        for (q, &l) in topology.queues.iter().zip(&lambda) {
            if l >= q.mu {
                return Err(Error::Unstable {
                    queue: q.id.clone(),
                    lambda: l,
                    mu: q.mu,
                });
            }
        }
    }
    Ok(ArrivalRates { lambda })
}

/// Evaluates the junction-balance form of the arrival rates,
///
/// λ_i = Σ_k Λ^k_i + Σ_h α_{h,i} (μ_h (1 − π⁰_h) − Σ_k M^k_h),
///
/// with stationary throughput and returns |that − λ_i| per queue, where λ_i
/// comes from the path splits. Nonzero residuals mean `alphas` does not
/// describe the same traffic as `splits`.
pub fn check_flow_conservation(
    topology: &Topology,
    splits: &Splits,
    alphas: &EdgeAlphas,
) -> Vec<f64> {
    let rates = compute_arrival_rates(topology, splits, false)
        .expect("rates without stability check cannot fail");
    let n = topology.queues.len();

    let mut ingress = vec![0.0; n];
    let mut egress = vec![0.0; n];
    for f in &topology.flows {
        ingress[f.ingress] += f.rate;
        egress[f.egress] += f.egress_rate();
    }

    let mut balance = ingress;
    for (&(h, i), &alpha) in alphas {
        let throughput = topology.queues[h].mu * (1.0 - rates.pi0(topology, h));
        balance[i] += alpha * (throughput - egress[h]);
    }
    balance
        .iter()
        .zip(&rates.lambda)
        .map(|(b, l)| (b - l).abs())
        .collect()
}
