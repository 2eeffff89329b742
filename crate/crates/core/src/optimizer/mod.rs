//! Bottleneck hunting over path-split probabilities, a brute-force grid
//! search to check it against, and recovery of junction transition
//! probabilities from the resulting splits.

mod alphas;
mod search;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use alphas::{
    edge_alphas, flow_conservation_residuals, junction_sums, path_probabilities,
    reconstruct_alphas, AlphaMap, AlphaReconstruction,
};
pub use search::{grid_search, simplex_grid, sweep, GridSearch, SweepPoint};

use crate::error::{Error, Result};
use crate::model::{ArrivalRates, Splits, Topology};
use crate::traveltime::{evaluate, Evaluation, SolverConfig};

/// Smallest objective decrease that counts as an improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

/// How the receiving path w′ is picked among the paths of flow k⋆.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WPrimeRule {
    /// argmin_w max_{i∈w} (μ_i − λ_i), as printed in the algorithm.
    #[default]
    LiteralPseudocode,
    /// argmax_w min_{i∈w} (μ_i − λ_i), the least-loaded path.
    MaxMinSlack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BhConfig {
    pub phi0: f64,
    pub phi_min: f64,
    pub wprime_rule: WPrimeRule,
    pub max_iterations: usize,
}

impl Default for BhConfig {
    fn default() -> Self {
        BhConfig {
            phi0: 0.25,
            phi_min: 1e-3,
            wprime_rule: WPrimeRule::LiteralPseudocode,
            max_iterations: 10_000,
        }
    }
}

impl BhConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.phi_min && self.phi_min < self.phi0 && self.phi0 < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < phi_min < phi0 < 1, got phi_min={} phi0={}",
                self.phi_min, self.phi0
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhStep {
    pub iteration: usize,
    pub phi: f64,
    pub k_star: usize,
    pub w_star: usize,
    pub w_prime: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    pub accepted: bool,
    /// Splits after this iteration.
    pub splits: Splits,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BhTrace {
    pub steps: Vec<BhStep>,
    /// Set when there was nothing to optimize.
    pub notice: Option<String>,
}

impl BhTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &BhStep> {
        self.steps.iter().filter(|s| s.accepted)
    }
}

/// A routing policy: path splits, service rates and the transition
/// probabilities that realize the splits at the junctions.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub splits: Splits,
    pub service_rates: Vec<f64>,
    pub alphas: AlphaReconstruction,
    pub objective_value: f64,
    pub flow_delta: Vec<f64>,
    pub path_delta: Vec<f64>,
}

impl Policy {
    pub fn from_splits(topology: &Topology, splits: Splits, config: &SolverConfig) -> Result<Policy> {
        let eval = evaluate(topology, &splits, config)?;
        Policy::from_evaluation(topology, splits, eval)
    }

    fn from_evaluation(topology: &Topology, splits: Splits, eval: Evaluation) -> Result<Policy> {
        let alphas = reconstruct_alphas(topology, &splits)?;
        Ok(Policy {
            splits,
            service_rates: topology.service_rates(),
            alphas,
            objective_value: eval.objective,
            flow_delta: eval.flow_delta,
            path_delta: eval.path_delta,
        })
    }
}

/// Queues q_i lying on two distinct paths w1, w2 with
/// (μ_i − λ_i) − min_{j∈w1, j≠i} (μ_j − λ_j) ≤ φ Λ^{κ(w2)}.
pub fn critical_queues(topology: &Topology, rates: &ArrivalRates, phi: f64) -> BTreeSet<usize> {
    let slack: Vec<f64> = (0..topology.queues.len())
        .map(|i| rates.slack(topology, i))
        .collect();
    let mut cq = BTreeSet::new();
    for i in 0..topology.queues.len() {
        let on: Vec<usize> = topology
            .paths
            .iter()
            .filter(|p| p.contains(i))
            .map(|p| p.id)
            .collect();
        'search: for &w1 in &on {
            let others = topology.paths[w1]
                .queues
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| slack[j])
                .fold(f64::INFINITY, f64::min);
            if !others.is_finite() {
                continue;
            }
            for &w2 in &on {
                if w2 == w1 {
                    continue;
                }
                let bound = phi * topology.flows[topology.paths[w2].flow].rate;
                if slack[i] - others <= bound {
                    cq.insert(i);
                    break 'search;
                }
            }
        }
    }
    cq
}

/// Splits after moving φ' = min(φ, p_{w⋆}) from w⋆ to w′.
pub fn apply_move(splits: &Splits, w_star: usize, w_prime: usize, phi: f64) -> Splits {
    let mut next = splits.clone();
    let from = splits.get(w_star);
    let moved = phi.min(from).max(0.0);
    next.0[w_star] = if moved == from { 0.0 } else { from - moved };
    next.0[w_prime] = (splits.get(w_prime) + moved).min(1.0);
    next
}

/// Evaluation of the moved splits when they are stable and lower the
/// objective by more than [`IMPROVEMENT_TOL`].
fn try_move(
    topology: &Topology,
    splits: &Splits,
    current: f64,
    w_star: usize,
    w_prime: usize,
    phi: f64,
    config: &SolverConfig,
) -> Option<(Splits, Evaluation)> {
    if w_star == w_prime || phi.min(splits.get(w_star)) <= 0.0 {
        return None;
    }
    let candidate = apply_move(splits, w_star, w_prime, phi);
    let eval = evaluate(topology, &candidate, config).ok()?;
    (eval.objective < current - IMPROVEMENT_TOL).then_some((candidate, eval))
}

/// Whether moving a fraction φ of flow k⋆ from w⋆ to w′ keeps every queue
/// stable and strictly lowers the objective.
pub fn does_improve(
    topology: &Topology,
    splits: &Splits,
    k_star: usize,
    w_star: usize,
    w_prime: usize,
    phi: f64,
    config: &SolverConfig,
) -> bool {
    let owned = |w: usize| topology.paths.get(w).is_some_and(|p| p.flow == k_star);
    if !owned(w_star) || !owned(w_prime) {
        return false;
    }
    let Ok(current) = evaluate(topology, splits, config) else {
        return false;
    };
    try_move(topology, splits, current.objective, w_star, w_prime, phi, config).is_some()
}

/// First index holding the largest value.
fn argmax_by<I: IntoIterator<Item = usize>>(items: I, key: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in items {
        let v = key(i);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn argmin_by<I: IntoIterator<Item = usize>>(items: I, key: impl Fn(usize) -> f64) -> Option<usize> {
    argmax_by(items, |i| -key(i))
}

/// Picks (k⋆, w⋆, w′) at the current state.
fn select(
    topology: &Topology,
    eval: &Evaluation,
    phi: f64,
    rule: WPrimeRule,
) -> (usize, usize, usize) {
    let cq = critical_queues(topology, &eval.rates, phi);
    let critical_path = |w: usize| topology.paths[w].queues.iter().any(|q| cq.contains(q));
    // only flows with a second path can shift traffic
    let movable = |k: &usize| topology.flow_paths(*k).len() >= 2;
    let mut fa: Vec<usize> = (0..topology.flows.len())
        .filter(movable)
        .filter(|&k| topology.flow_paths(k).iter().any(|&w| !critical_path(w)))
        .collect();
    if fa.is_empty() {
        fa = (0..topology.flows.len()).filter(movable).collect();
    }
    let k_star = argmax_by(fa, |k| eval.flow_delta[k]).expect("a flow with two paths");
    let paths = topology.flow_paths(k_star);
    let w_star = argmax_by(paths.iter().copied(), |w| eval.path_delta[w]).expect("flow has paths");
    let slack = |i: usize| eval.rates.slack(topology, i);
    let receivers = paths.iter().copied().filter(|&w| w != w_star);
    let w_prime = match rule {
        WPrimeRule::LiteralPseudocode => argmin_by(receivers, |w| {
            topology.paths[w].queues.iter().map(|&i| slack(i)).fold(f64::NEG_INFINITY, f64::max)
        }),
        WPrimeRule::MaxMinSlack => argmax_by(receivers, |w| {
            topology.paths[w].queues.iter().map(|&i| slack(i)).fold(f64::INFINITY, f64::min)
        }),
    }
    .unwrap_or(w_star);
    (k_star, w_star, w_prime)
}

/// Runs bottleneck hunting from `initial`. Service rates stay at the values
/// stored in the topology.
pub fn bh_optimize(
    topology: &Topology,
    initial: &Splits,
    solver: &SolverConfig,
    config: &BhConfig,
) -> Result<(Policy, BhTrace)> {
    config.validate()?;
    solver.validate(topology)?;
    for k in 0..topology.flows.len() {
        let sum = initial.flow_sum(topology, k);
        if (sum - 1.0).abs() > 1e-9 || topology.flow_paths(k).iter().any(|&w| initial.get(w) < 0.0) {
            return Err(Error::Infeasible(format!(
                "initial splits of flow `{}` sum to {sum}",
                topology.flows[k].id
            )));
        }
    }

    let mut splits = initial.clone();
    let mut eval = evaluate(topology, &splits, solver)?;
    let mut trace = BhTrace::default();
    if !(0..topology.flows.len()).any(|k| topology.flow_paths(k).len() >= 2) {
        trace.notice = Some("no degrees of freedom: every flow has a single path".into());
        return Ok((Policy::from_evaluation(topology, splits, eval)?, trace));
    }

    let mut phi = config.phi0;
    for iteration in 1..=config.max_iterations {
        let (k_star, w_star, w_prime) = select(topology, &eval, phi, config.wprime_rule);
        let before = eval.objective;
        let outcome = try_move(topology, &splits, before, w_star, w_prime, phi, solver);
        let accepted = outcome.is_some();
        let after = outcome.as_ref().map_or(before, |(_, e)| e.objective);
        let after_splits = outcome.as_ref().map_or_else(|| splits.clone(), |(s, _)| s.clone());
        trace.steps.push(BhStep {
            iteration,
            phi,
            k_star,
            w_star,
            w_prime,
            objective_before: before,
            objective_after: after,
            accepted,
            splits: after_splits,
        });
        match outcome {
            Some((s, e)) => {
                splits = s;
                eval = e;
            }
            None => {
                phi /= 2.0;
                if phi < config.phi_min {
                    break;
                }
            }
        }
    }
    Ok((Policy::from_evaluation(topology, splits, eval)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_topology, ServiceModel, SplitMap};
    use approx::assert_abs_diff_eq;

    fn fig2() -> Topology {
        load_topology(include_str!("../../../../data/fig2.topo"))
            .unwrap()
            .enumerate_paths()
            .unwrap()
    }

    fn with_late(t: &Topology, late: f64) -> Splits {
        let mut map = SplitMap::new();
        map.insert(
            "f2".into(),
            [("q2-q3-q5".to_string(), 1.0 - late), ("q2-q4-q5".to_string(), late)]
                .into_iter()
                .collect(),
        );
        t.splits_from_map(&map).unwrap()
    }

    fn late_path(t: &Topology) -> usize {
        t.path_by_signature(1, "q2-q4-q5").unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(BhConfig::default().validate().is_ok());
        for (phi0, phi_min) in [(0.25, 0.25), (1.0, 0.1), (0.2, 0.0), (0.1, 0.2)] {
            let c = BhConfig { phi0, phi_min, ..BhConfig::default() };
            assert!(c.validate().is_err(), "{phi0} {phi_min}");
        }
    }

    #[test]
    fn critical_queues_by_hand() {
        // p_late = 0.5: λ1 = 1, λ2 = 1, λ3 = 1.5, λ4 = 0.5, λ5 = 2
        let t = fig2();
        let rates = crate::model::compute_arrival_rates(&t, &with_late(&t, 0.5), true).unwrap();
        assert_eq!(rates.lambda, vec![1.0, 1.0, 1.5, 0.5, 2.0]);
        // slacks: 2, 2, 1.5, 1, 1
        // q2 on early (q2,q3,q5) and late (q2,q4,q5): w1 = early → 2 − min(1.5, 1) = 1 > 0.1
        //   w1 = late → 2 − min(1, 1) = 1 > 0.1 → not critical
        // q5 on all three paths: w1 = f1 path → 1 − min(2, 1.5) = −0.5 ≤ 0.1 → critical
        // q3 on f1 and early: w1 = f1 → 1.5 − min(2, 1) = 0.5 > 0.1; w1 = early → 1.5 − 1 = 0.5
        let cq = critical_queues(&t, &rates, 0.1);
        assert_eq!(cq, BTreeSet::from([4]));
        // at φ = 0.5 q3 joins
        assert_eq!(critical_queues(&t, &rates, 0.5), BTreeSet::from([2, 4]));
    }

    #[test]
    fn one_path_per_queue_has_no_critical_queues() {
        let t = load_topology(include_str!("../../../../data/single_path.topo"))
            .unwrap()
            .enumerate_paths()
            .unwrap();
        let rates = crate::model::compute_arrival_rates(&t, &t.initial_splits(), true).unwrap();
        assert!(critical_queues(&t, &rates, 10.0).is_empty());
    }

    #[test]
    fn phi_zero_needs_equal_slack() {
        // q5's slack is already below every other slack on flow 1's path
        let t = fig2();
        let rates = crate::model::compute_arrival_rates(&t, &with_late(&t, 0.5), true).unwrap();
        assert_eq!(critical_queues(&t, &rates, 0.0), BTreeSet::from([4]));
    }

    #[test]
    fn does_improve_examples() {
        let t = fig2();
        let cfg = SolverConfig::for_topology(&t);
        let late = late_path(&t);
        let early = t.path_by_signature(1, "q2-q3-q5").unwrap();
        let s = with_late(&t, 0.9);
        assert!(does_improve(&t, &s, 1, late, early, 0.2, &cfg));
        assert!(!does_improve(&t, &s, 1, late, early, 0.0, &cfg));
        // with μ4 = 1 the late path cannot take all of flow 2
        let mut tight = t.clone();
        tight.queues[3].mu = 1.0;
        tight.queues[3].mu_max = 1.0;
        let s = with_late(&tight, 0.5);
        assert!(!does_improve(&tight, &s, 1, early, late, 0.5, &cfg));
    }

    #[test]
    fn moves_are_clamped() {
        let t = fig2();
        let late = late_path(&t);
        let early = t.path_by_signature(1, "q2-q3-q5").unwrap();
        let s = apply_move(&with_late(&t, 0.1), late, early, 0.25);
        assert_eq!(s.get(late), 0.0);
        assert_eq!(s.get(early), 1.0);
    }

    #[test]
    fn single_path_returns_initial_policy() {
        let t = load_topology(include_str!("../../../../data/single_path.topo"))
            .unwrap()
            .enumerate_paths()
            .unwrap();
        let cfg = SolverConfig::for_topology(&t);
        let (policy, trace) = bh_optimize(&t, &t.initial_splits(), &cfg, &BhConfig::default()).unwrap();
        assert!(trace.steps.is_empty());
        assert!(trace.notice.unwrap().contains("no degrees of freedom"));
        assert_eq!(policy.splits, t.initial_splits());
    }

    fn check_against_grid(t: &Topology) {
        let cfg = SolverConfig::for_topology(t);
        let grid = grid_search(t, 0.01, &cfg).unwrap();
        let late = late_path(t);
        for rule in [WPrimeRule::LiteralPseudocode, WPrimeRule::MaxMinSlack] {
            let bh = BhConfig { wprime_rule: rule, ..BhConfig::default() };
            let (policy, trace) = bh_optimize(t, &t.initial_splits(), &cfg, &bh).unwrap();
            assert!(policy.objective_value <= grid.policy.objective_value + 1e-3, "{rule:?}");
            let gap = (policy.splits.get(late) - grid.policy.splits.get(late)).abs();
            // moves only leave the worst path, so the last accepted point
            // approaches the interior minimum from one side
            assert!(gap <= 0.02, "{rule:?}: gap {gap}");
            let accepted: Vec<f64> = trace.accepted().map(|s| s.objective_after).collect();
            assert!(accepted.windows(2).all(|w| w[1] < w[0]));
            assert!(trace.steps.last().unwrap().phi / 2.0 < bh.phi_min);
        }
    }

    #[test]
    fn bh_matches_grid_search_mm1() {
        check_against_grid(&fig2());
    }

    #[test]
    fn bh_matches_grid_search_md1() {
        check_against_grid(&fig2().with_service_model(ServiceModel::Deterministic));
    }

    #[test]
    fn policy_alphas_follow_splits() {
        let t = fig2();
        let cfg = SolverConfig::for_topology(&t);
        let p = Policy::from_splits(&t, with_late(&t, 0.4), &cfg).unwrap();
        assert_abs_diff_eq!(p.alphas.alphas[&(1, 1, 3)], 0.4, epsilon = 1e-12);
        assert_eq!(p.service_rates, vec![3.0, 3.0, 3.0, 1.5, 3.0]);
    }
}
