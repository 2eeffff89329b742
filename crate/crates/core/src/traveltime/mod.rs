//! Travel-time distributions: per-queue sojourn times, their composition
//! along a path, and the exceedance metrics built on top of them.
//!
//! Sojourn times at successive queues are treated as independent, so the
//! path travel time is the sum of independent per-queue sojourn times. An
//! all-Markovian path with distinct slacks has a hypoexponential closed form;
//! anything else is composed numerically on a uniform time lattice.

pub mod grid;
pub mod md1;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compute_arrival_rates, ArrivalRates, RoadQueue, ServiceModel, Splits, Topology};
pub use grid::Grid;

/// Two slacks closer than this (relative to the largest) are treated as equal
/// and the path falls back to numerical convolution.
const DISTINCT_SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Lattice resolution Δ.
    pub step: f64,
    /// Truncation horizon T_max.
    pub horizon: f64,
    /// Largest tail mass tolerated beyond the horizon.
    pub tail_tol: f64,
    /// Term cap for the M/D/1 waiting-time series.
    pub md1_series_terms: usize,
}

impl SolverConfig {
    /// Δ = ω_min / 2000, T_max = 10 ω_max.
    pub fn for_topology(topology: &Topology) -> SolverConfig {
        let omegas = topology.flows.iter().map(|f| f.omega);
        let min = omegas.clone().fold(f64::INFINITY, f64::min);
        let max = omegas.fold(0.0, f64::max);
        let (min, max) = if topology.flows.is_empty() {
            (1.0, 1.0)
        } else {
            (min, max)
        };
        SolverConfig {
            step: min / 2000.0,
            horizon: 10.0 * max,
            tail_tol: 1e-4,
            md1_series_terms: 200,
        }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Config(format!("step must be positive, got {}", self.step)));
        }
        let max_omega = topology.flows.iter().map(|f| f.omega).fold(0.0, f64::max);
        if !(self.horizon >= 4.0 * max_omega && self.horizon > self.step) {
            return Err(Error::Config(format!(
                "horizon {} must be at least 4 x the largest target travel time ({max_omega})",
                self.horizon
            )));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol <= 0.01) {
            return Err(Error::Config(format!("tail_tol {} outside (0, 0.01]", self.tail_tol)));
        }
        if self.md1_series_terms == 0 {
            return Err(Error::Config("md1_series_terms must be at least 1".into()));
        }
        Ok(())
    }

    fn lattice_len(&self, origin: f64, until: f64) -> usize {
        ((until - origin).max(0.0) / self.step).ceil() as usize + 1
    }
}

/// One term A·t^n·e^{τt} of a survival function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub coeff: f64,
    pub power: u32,
    pub tau: f64,
}

/// A distribution whose complement is a finite sum of [`ExpTerm`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    pub terms: Vec<ExpTerm>,
    pub horizon: f64,
}

impl ClosedForm {
    pub fn exponential(rate: f64, horizon: f64) -> ClosedForm {
        ClosedForm {
            terms: vec![ExpTerm {
                coeff: 1.0,
                power: 0,
                tau: -rate,
            }],
            horizon,
        }
    }

    /// Sum of independent exponentials with pairwise distinct rates:
    /// P(T > t) = Σ_i c_i e^{−r_i t}, c_i = Π_{j≠i} r_j / (r_j − r_i).
    pub fn hypoexponential(rates: &[f64], horizon: f64) -> ClosedForm {
        let terms = rates
            .iter()
            .enumerate()
            .map(|(i, &ri)| {
                let coeff = rates
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &rj)| rj / (rj - ri))
                    .product();
                ExpTerm {
                    coeff,
                    power: 0,
                    tau: -ri,
                }
            })
            .collect();
        ClosedForm { terms, horizon }
    }

    /// Rate of a plain exponential, if this is one.
    pub fn exponential_rate(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [ExpTerm {
                coeff,
                power: 0,
                tau,
            }] if *coeff == 1.0 && *tau < 0.0 => Some(-tau),
            _ => None,
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        self.terms
            .iter()
            .map(|term| term.coeff * t.powi(term.power as i32) * (term.tau * t).exp())
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// ∫_0^∞ survival = Σ A n! / (−τ)^{n+1}.
    pub fn mean(&self) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                let fact: f64 = (1..=term.power).map(f64::from).product();
                term.coeff * fact / (-term.tau).powi(term.power as i32 + 1)
            })
            .sum()
    }

    fn sample(&self, step: f64, len: usize) -> Grid {
        Grid {
            origin: 0.0,
            step,
            cdf: (0..len).map(|j| 1.0 - self.survival(j as f64 * step)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    ClosedForm,
    Gridded,
}

/// A travel-time CDF.
#[derive(Debug, Clone, PartialEq)]
pub enum TravelTimeDistribution {
    ClosedForm(ClosedForm),
    Gridded { grid: Grid, horizon: f64 },
}

impl TravelTimeDistribution {
    pub fn kind(&self) -> DistributionKind {
        match self {
            TravelTimeDistribution::ClosedForm(_) => DistributionKind::ClosedForm,
            TravelTimeDistribution::Gridded { .. } => DistributionKind::Gridded,
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            TravelTimeDistribution::ClosedForm(c) => c.horizon,
            TravelTimeDistribution::Gridded { horizon, .. } => *horizon,
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            TravelTimeDistribution::ClosedForm(c) => {
                if t < 0.0 {
                    0.0
                } else {
                    1.0 - c.survival(t)
                }
            }
            TravelTimeDistribution::Gridded { grid, .. } => grid.cdf_at(t),
        }
    }

    /// F(t−); differs from [`cdf`](Self::cdf) only at an atom.
    pub fn cdf_before(&self, t: f64) -> f64 {
        match self {
            TravelTimeDistribution::ClosedForm(_) => self.cdf(t),
            TravelTimeDistribution::Gridded { grid, .. } => grid.cdf_before(t),
        }
    }

    /// Mean travel time, integrating the complement up to the horizon for
    /// gridded distributions.
    pub fn mean(&self) -> f64 {
        match self {
            TravelTimeDistribution::ClosedForm(c) => c.mean(),
            TravelTimeDistribution::Gridded { grid, .. } => grid.mean(),
        }
    }

    /// CDF samples on `origin + k·step` up to `len` points.
    pub fn to_grid(&self, step: f64, len: usize) -> Grid {
        match self {
            TravelTimeDistribution::ClosedForm(c) => c.sample(step, len),
            TravelTimeDistribution::Gridded { grid, .. } => grid.clone().resized(len),
        }
    }

    /// Smallest time the distribution can take.
    pub fn support_start(&self) -> f64 {
        match self {
            TravelTimeDistribution::ClosedForm(_) => 0.0,
            TravelTimeDistribution::Gridded { grid, .. } => grid.origin,
        }
    }

    /// Inverse CDF by bisection.
    pub fn quantile(&self, u: f64) -> f64 {
        if let TravelTimeDistribution::ClosedForm(c) = self {
            if let Some(rate) = c.exponential_rate() {
                return -(1.0 - u).ln() / rate;
            }
        }
        let mut lo = self.support_start();
        if self.cdf(lo) >= u {
            return lo;
        }
        let mut hi = self.horizon().max(lo + 1.0);
        while self.cdf(hi) < u && hi < 1e6 * self.horizon().max(1.0) {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi.max(1.0) {
                break;
            }
        }
        hi
    }
}

fn check_stable(queue: &RoadQueue, lambda: f64) -> Result<()> {
    if lambda >= queue.mu || lambda < 0.0 {
        return Err(Error::Unstable {
            queue: queue.id.clone(),
            lambda,
            mu: queue.mu,
        });
    }
    Ok(())
}

/// M/D/1 sojourn time sampled on its own lattice starting at D = 1/μ.
fn md1_sojourn_grid(queue: &RoadQueue, lambda: f64, config: &SolverConfig, len: usize) -> Grid {
    let d = 1.0 / queue.mu;
    Grid {
        origin: d,
        step: config.step,
        cdf: md1::waiting_cdf_grid(lambda, queue.mu, config.step, len, config.md1_series_terms),
    }
}

/// Sojourn-time distribution of a single queue fed at rate `lambda`.
///
/// Markovian service gives an exponential with rate μ − λ. Deterministic
/// service gives waiting time plus the constant 1/μ, sampled on a lattice
/// that starts at 1/μ and reaches the configured horizon.
pub fn sojourn_distribution(
    queue: &RoadQueue,
    lambda: f64,
    config: &SolverConfig,
) -> Result<TravelTimeDistribution> {
    check_stable(queue, lambda)?;
    Ok(match queue.service {
        ServiceModel::Markovian => {
            TravelTimeDistribution::ClosedForm(ClosedForm::exponential(queue.mu - lambda, config.horizon))
        }
        ServiceModel::Deterministic => {
            let d = 1.0 / queue.mu;
            let len = config.lattice_len(d, config.horizon);
            TravelTimeDistribution::Gridded {
                grid: md1_sojourn_grid(queue, lambda, config, len),
                horizon: config.horizon,
            }
        }
    })
}

/// Pollaczek–Khinchine mean sojourn time for either service model.
pub fn mean_sojourn(queue: &RoadQueue, lambda: f64) -> f64 {
    match queue.service {
        ServiceModel::Markovian => 1.0 / (queue.mu - lambda),
        ServiceModel::Deterministic => md1::mean_sojourn(lambda, queue.mu),
    }
}

fn distinct_rates(dists: &[&TravelTimeDistribution]) -> Option<Vec<f64>> {
    let rates: Vec<f64> = dists
        .iter()
        .map(|d| match d {
            TravelTimeDistribution::ClosedForm(c) => c.exponential_rate(),
            _ => None,
        })
        .collect::<Option<_>>()?;
    let max = rates.iter().cloned().fold(0.0, f64::max);
    for (i, a) in rates.iter().enumerate() {
        for b in &rates[i + 1..] {
            if (a - b).abs() < DISTINCT_SLACK_TOL * max {
                return None;
            }
        }
    }
    Some(rates)
}

/// Convolves `dists` on the common lattice up to `until`; returns the lattice
/// CDF of the sum.
fn convolve_all(dists: &[&TravelTimeDistribution], step: f64, until: f64) -> Grid {
    let origin: f64 = dists.iter().map(|d| d.support_start()).sum();
    let len = (((until - origin).max(0.0) / step).ceil() as usize + 2).max(2);
    let mut acc = dists[0].to_grid(step, len + 1);
    for d in &dists[1..] {
        let next = d.to_grid(step, len + 1);
        acc = grid::convolve(&acc, &next, len + 1);
    }
    acc.resized(len)
}

/// Distribution of the sum of independent per-queue sojourn times along a
/// path. Closed form when every member is exponential with distinct rates,
/// otherwise a lattice convolution checked for tail mass at the horizon.
pub fn path_distribution(
    dists: &[&TravelTimeDistribution],
    config: &SolverConfig,
) -> Result<TravelTimeDistribution> {
    assert!(!dists.is_empty(), "a path has at least one queue");
    if dists.len() == 1 {
        return Ok(dists[0].clone());
    }
    if let Some(rates) = distinct_rates(dists) {
        return Ok(TravelTimeDistribution::ClosedForm(ClosedForm::hypoexponential(
            &rates,
            config.horizon,
        )));
    }
    convolved_path_distribution(dists, config)
}

/// Lattice convolution of `dists` regardless of whether a closed form exists.
pub fn convolved_path_distribution(
    dists: &[&TravelTimeDistribution],
    config: &SolverConfig,
) -> Result<TravelTimeDistribution> {
    assert!(!dists.is_empty(), "a path has at least one queue");
    let grid = convolve_all(dists, config.step, config.horizon);
    let at_horizon = grid.cdf_at(config.horizon);
    if at_horizon < 1.0 - config.tail_tol {
        return Err(Error::Horizon {
            horizon: config.horizon,
            detail: format!("tail mass {} exceeds {}", 1.0 - at_horizon, config.tail_tol),
        });
    }
    Ok(TravelTimeDistribution::Gridded {
        grid,
        horizon: config.horizon,
    })
}

/// F_path(t) without materializing the lattice beyond `t`.
fn path_cdf_at(dists: &[&TravelTimeDistribution], t: f64, config: &SolverConfig) -> f64 {
    if dists.len() == 1 {
        return dists[0].cdf(t);
    }
    if let Some(rates) = distinct_rates(dists) {
        return 1.0 - ClosedForm::hypoexponential(&rates, config.horizon).survival(t);
    }
    convolve_all(dists, config.step, t).cdf_at(t)
}

/// δ_w(t̂) = 1 − F_w(t̂).
pub fn delta_path(dist: &TravelTimeDistribution, t_hat: f64) -> Result<f64> {
    if t_hat > dist.horizon() {
        return Err(Error::Horizon {
            horizon: dist.horizon(),
            detail: format!("threshold {t_hat} lies beyond it"),
        });
    }
    if t_hat < 0.0 {
        return Err(Error::Config(format!("negative threshold {t_hat}")));
    }
    Ok(1.0 - dist.cdf(t_hat))
}

/// δ^k(ω) = Σ_w p_w δ_w(ω) over the flow's paths.
pub fn delta_flow(omega: f64, paths: &[(f64, &TravelTimeDistribution)]) -> Result<f64> {
    paths
        .iter()
        .map(|&(p, dist)| delta_path(dist, omega).map(|d| p * d))
        .sum()
}

/// Per-queue sojourn distributions for every queue that lies on some path.
pub fn queue_distributions(
    topology: &Topology,
    rates: &ArrivalRates,
    config: &SolverConfig,
) -> Result<Vec<Option<TravelTimeDistribution>>> {
    let mut used = vec![false; topology.queues.len()];
    for p in &topology.paths {
        for &q in &p.queues {
            used[q] = true;
        }
    }
    topology
        .queues
        .iter()
        .zip(&rates.lambda)
        .zip(used)
        .map(|((q, &l), used)| {
            if used {
                sojourn_distribution(q, l, config).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Full-horizon travel-time distribution of every path under `splits`.
pub fn path_distributions(
    topology: &Topology,
    splits: &Splits,
    config: &SolverConfig,
) -> Result<Vec<TravelTimeDistribution>> {
    use rayon::prelude::*;
    let rates = compute_arrival_rates(topology, splits, true)?;
    let per_queue = queue_distributions(topology, &rates, config)?;
    topology
        .paths
        .par_iter()
        .map(|p| {
            let members: Vec<&TravelTimeDistribution> = p
                .queues
                .iter()
                .map(|&q| per_queue[q].as_ref().expect("queue lies on a path"))
                .collect();
            path_distribution(&members, config)
        })
        .collect()
}

/// Everything the optimizer needs to know about one split vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rates: ArrivalRates,
    /// δ_w(ω^{κ(w)}) per path.
    pub path_delta: Vec<f64>,
    /// δ^k(ω^k) per flow.
    pub flow_delta: Vec<f64>,
    /// max_k δ^k(ω^k); zero when there are no flows.
    pub objective: f64,
}

/// Evaluates the min-max objective at `splits`. Each path CDF is computed
/// only up to its flow's target travel time.
pub fn evaluate(topology: &Topology, splits: &Splits, config: &SolverConfig) -> Result<Evaluation> {
    let rates = compute_arrival_rates(topology, splits, true)?;
    let max_omega = topology.flows.iter().map(|f| f.omega).fold(0.0, f64::max);
    let short = SolverConfig {
        horizon: config.horizon.min(max_omega + 4.0 * config.step).max(config.step),
        ..*config
    };
    let per_queue = queue_distributions(topology, &rates, &short)?;

    let mut path_delta = Vec::with_capacity(topology.paths.len());
    for p in &topology.paths {
        let omega = topology.flows[p.flow].omega;
        if omega > config.horizon {
            return Err(Error::Horizon {
                horizon: config.horizon,
                detail: format!("target travel time {omega} lies beyond it"),
            });
        }
        let members: Vec<&TravelTimeDistribution> = p
            .queues
            .iter()
            .map(|&q| per_queue[q].as_ref().expect("queue lies on a path"))
            .collect();
        path_delta.push((1.0 - path_cdf_at(&members, omega, &short)).clamp(0.0, 1.0));
    }

    let flow_delta: Vec<f64> = (0..topology.flows.len())
        .map(|k| {
            topology
                .flow_paths(k)
                .iter()
                .map(|&w| splits.get(w) * path_delta[w])
                .sum()
        })
        .collect();
    let objective = flow_delta.iter().cloned().fold(0.0, f64::max);
    Ok(Evaluation {
        rates,
        path_delta,
        flow_delta,
        objective,
    })
}

/// max_k δ^k(ω^k), the quantity bottleneck hunting minimizes.
pub fn objective(topology: &Topology, splits: &Splits, config: &SolverConfig) -> Result<f64> {
    evaluate(topology, splits, config).map(|e| e.objective)
}
