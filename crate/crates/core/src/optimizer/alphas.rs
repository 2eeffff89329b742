//! Junction transition probabilities recovered from path splits.
//!
//! Each flow's split of a path is the product of the transition
//! probabilities along it. Taking logarithms gives a linear system in
//! log α, solved here per flow in the least-squares sense.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{compute_arrival_rates, EdgeAlphas, Splits, Topology};

/// Per-flow transition probabilities α^k_{i,j}, keyed by (flow, from, to).
pub type AlphaMap = BTreeMap<(usize, usize, usize), f64>;

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaReconstruction {
    pub alphas: AlphaMap,
    /// max_w |p_w − Π α| over all paths.
    pub max_reproduction_error: f64,
    /// max over junctions of |Σ_j α^k_{i,j} − 1|.
    pub normalization_error: f64,
    /// Number of unknown log α across all flows.
    pub unknowns: usize,
    /// Rank of the log-linear system, summed over flows.
    pub rank: usize,
    /// Null-space basis of each flow's system, as (flow, [(from, to, weight)]).
    pub free_directions: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl AlphaReconstruction {
    pub fn is_consistent(&self, tol: f64) -> bool {
        self.max_reproduction_error <= tol
    }
}

#[derive(Clone, Copy, PartialEq)]
enum EdgeClass {
    Fixed(f64),
    Unknown(usize),
}

/// Links used by `flow`'s paths, in first-use order.
fn flow_links(topology: &Topology, flow: usize) -> Vec<(usize, usize)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &w in topology.flow_paths(flow) {
        for link in topology.paths[w].links() {
            if seen.insert(link) {
                out.push(link);
            }
        }
    }
    out
}

/// Solves log p_w = Σ_{links of w} log α for every flow.
///
/// Links out of a queue that the flow leaves through a single link are
/// pinned to 1, links with a fixed α keep it, and a path with p = 0 drops
/// its equation; the first link where it leaves every positive path gets
/// α = 0.
pub fn reconstruct_alphas(topology: &Topology, splits: &Splits) -> Result<AlphaReconstruction> {
    let mut alphas = AlphaMap::new();
    let mut unknowns = 0;
    let mut rank = 0;
    let mut free_directions = Vec::new();

    for k in 0..topology.flows.len() {
        let paths = topology.flow_paths(k);
        let links = flow_links(topology, k);
        let positive: Vec<usize> = paths.iter().copied().filter(|&w| splits.get(w) > 0.0).collect();
        if positive.is_empty() {
            return Err(Error::Infeasible(format!(
                "flow `{}` has no path with positive split",
                topology.flows[k].id
            )));
        }
        let positive_links: BTreeSet<(usize, usize)> = positive
            .iter()
            .flat_map(|&w| topology.paths[w].links())
            .collect();

        let out_degree = |i: usize| links.iter().filter(|l| l.0 == i).count();

        let mut class = BTreeMap::new();
        let mut unknown_links = Vec::new();
        for &(i, j) in &links {
            let c = if let Some(a) = topology.edge(i, j).and_then(|e| e.alpha_fixed) {
                EdgeClass::Fixed(a)
            } else if out_degree(i) == 1 {
                EdgeClass::Fixed(1.0)
            } else if !positive_links.contains(&(i, j)) {
                EdgeClass::Fixed(0.0)
            } else {
                unknown_links.push((i, j));
                EdgeClass::Unknown(unknown_links.len() - 1)
            };
            class.insert((i, j), c);
        }

        let n = unknown_links.len();
        unknowns += n;
        let mut x = DVector::zeros(n);
        if n > 0 {
            let m = positive.len();
            let rows = m.max(n);
            let mut a: DMatrix<f64> = DMatrix::zeros(rows, n);
            let mut b = DVector::zeros(rows);
            for (r, &w) in positive.iter().enumerate() {
                let mut rhs = splits.get(w).ln();
                for link in topology.paths[w].links() {
                    match class[&link] {
                        EdgeClass::Unknown(c) => a[(r, c)] += 1.0,
                        EdgeClass::Fixed(v) => rhs -= v.ln(),
                    }
                }
                b[r] = rhs;
            }
            let svd = a.svd(true, true);
            let smax: f64 = svd.singular_values.max();
            let tol = RANK_TOL * smax.max(1.0);
            let flow_rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
            rank += flow_rank;
            x = svd
                .solve(&b, tol)
                .map_err(|e| Error::Infeasible(format!("alpha system: {e}")))?;

            let v_t = svd.v_t.expect("requested V^T");
            let null: Vec<DVector<f64>> = svd
                .singular_values
                .iter()
                .enumerate()
                .filter(|(_, &s)| s <= tol)
                .map(|(c, _)| v_t.row(c).transpose())
                .collect();
            if !null.is_empty() {
                for dir in &null {
                    free_directions.push((
                        k,
                        unknown_links
                            .iter()
                            .zip(dir.iter())
                            .map(|(&(i, j), &v)| (i, j, v))
                            .collect(),
                    ));
                }
                x = fit_normalization(&links, &class, x, &null);
            }
        }

        for &(i, j) in &links {
            let value = match class[&(i, j)] {
                EdgeClass::Fixed(v) => v,
                EdgeClass::Unknown(c) => x[c].exp(),
            };
            alphas.insert((k, i, j), value);
        }
    }

    let reproduced = path_probabilities(topology, &alphas);
    let max_reproduction_error = reproduced
        .0
        .iter()
        .zip(splits.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let normalization_error = junction_sums(&alphas)
        .values()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);

    Ok(AlphaReconstruction {
        alphas,
        max_reproduction_error,
        normalization_error,
        unknowns,
        rank,
        free_directions,
    })
}

/// Σ_j α^k_{i,j} per (flow, junction).
pub fn junction_sums(alphas: &AlphaMap) -> BTreeMap<(usize, usize), f64> {
    let mut sums = BTreeMap::new();
    for (&(k, i, _), &a) in alphas {
        *sums.entry((k, i)).or_insert(0.0) += a;
    }
    sums
}

/// Moves `x` along the null space so each junction's α sum to one as
/// closely as possible. Path reproduction does not change.
fn fit_normalization(
    links: &[(usize, usize)],
    class: &BTreeMap<(usize, usize), EdgeClass>,
    mut x: DVector<f64>,
    null: &[DVector<f64>],
) -> DVector<f64> {
    let junctions: BTreeSet<usize> = links
        .iter()
        .filter(|l| matches!(class[l], EdgeClass::Unknown(_)))
        .map(|l| l.0)
        .collect();
    let junctions: Vec<usize> = junctions.into_iter().collect();
    let basis = DMatrix::from_columns(null);

    let residual = |x: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            junctions.len(),
            junctions.iter().map(|&i| {
                links
                    .iter()
                    .filter(|l| l.0 == i)
                    .map(|l| match class[l] {
                        EdgeClass::Fixed(v) => v,
                        EdgeClass::Unknown(c) => x[c].exp(),
                    })
                    .sum::<f64>()
                    - 1.0
            }),
        )
    };

    for _ in 0..100 {
        let r = residual(&x);
        let mut jac = DMatrix::zeros(junctions.len(), null.len());
        for (row, &i) in junctions.iter().enumerate() {
            for l in links.iter().filter(|l| l.0 == i) {
                if let EdgeClass::Unknown(c) = class[l] {
                    let a = x[c].exp();
                    for col in 0..null.len() {
                        jac[(row, col)] += a * basis[(c, col)];
                    }
                }
            }
        }
        let Ok(dz) = jac.svd(true, true).solve(&(-&r), 1e-14) else {
            break;
        };
        // damped step: accept the largest halving that reduces the residual
        let before = r.norm();
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let candidate = &x + &basis * (&dz * scale);
            if residual(&candidate).norm() < before {
                x = candidate;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved || dz.norm() * scale < 1e-15 {
            break;
        }
    }
    x
}

/// Path splits implied by per-flow transition probabilities: the product of
/// α along each path.
pub fn path_probabilities(topology: &Topology, alphas: &AlphaMap) -> Splits {
    Splits(
        topology
            .paths
            .iter()
            .map(|p| {
                p.links()
                    .map(|(i, j)| alphas.get(&(p.flow, i, j)).copied().unwrap_or(0.0))
                    .product()
            })
            .collect(),
    )
}

/// Aggregate edge-level α_{h,i}: the fraction of vehicles leaving queue h
/// (and staying in the topology) that move on to queue i. Each flow's traffic
/// is propagated through its own transition probabilities; the denominator
/// uses the arrival rates implied by `splits`.
pub fn edge_alphas(topology: &Topology, splits: &Splits, alphas: &AlphaMap) -> EdgeAlphas {
    let n = topology.queues.len();
    let rates = compute_arrival_rates(topology, splits, false)
        .expect("rates without stability check cannot fail");
    let mut edge_flow: BTreeMap<(usize, usize), f64> = BTreeMap::new();

    for (k, flow) in topology.flows.iter().enumerate() {
        let links = flow_links(topology, k);
        let mut indegree = vec![0usize; n];
        for &(_, j) in &links {
            indegree[j] += 1;
        }
        let mut traffic = vec![0.0; n];
        traffic[flow.ingress] = flow.rate;
        let mut ready = vec![flow.ingress];
        while let Some(i) = ready.pop() {
            for &(a, b) in links.iter().filter(|l| l.0 == i) {
                let moved = traffic[i] * alphas.get(&(k, a, b)).copied().unwrap_or(0.0);
                traffic[b] += moved;
                *edge_flow.entry((a, b)).or_insert(0.0) += moved;
                indegree[b] -= 1;
                if indegree[b] == 0 {
                    ready.push(b);
                }
            }
        }
    }

    let mut egress = vec![0.0; n];
    for f in &topology.flows {
        egress[f.egress] += f.egress_rate();
    }
    edge_flow
        .into_iter()
        .map(|((h, i), flow)| {
            let leaving = rates.lambda[h] - egress[h];
            let alpha = if leaving > 1e-15 { flow / leaving } else { 0.0 };
            ((h, i), alpha)
        })
        .collect()
}

/// Junction-balance residuals with α reconstructed from `splits`.
pub fn flow_conservation_residuals(topology: &Topology, splits: &Splits) -> Result<Vec<f64>> {
    let rec = reconstruct_alphas(topology, splits)?;
    let edges = edge_alphas(topology, splits, &rec.alphas);
    Ok(crate::model::check_flow_conservation(topology, splits, &edges))
}
