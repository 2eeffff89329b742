//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use queuenet::model::{RoadQueue, ServiceModel, Topology};
use queuenet::optimizer::{
    bh_optimize, grid_search, reconstruct_alphas, sweep, AlphaMap, BhConfig, WPrimeRule,
};
use queuenet::simulator::{ks_distance, simulate, SimConfig};
use queuenet::traveltime::{
    convolved_path_distribution, path_distribution, path_distributions,
    sojourn_distribution, DistributionKind, SolverConfig, TravelTimeDistribution,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    out.pass &= took <= limit;
    out.detail = format!("{}; {:.1} s (limit {} s)", out.detail, took.as_secs_f64(), limit.as_secs());
    out
}

fn engines() -> [(&'static str, Topology); 2] {
    [
        ("M/M/1", fig2()),
        ("M/D/1", fig2().with_service_model(ServiceModel::Deterministic)),
    ]
}

fn late_path(t: &Topology) -> usize {
    t.path_by_signature(1, "q2-q4-q5").unwrap()
}

/// Objective curve over p_late: minimizer inside (0.25, 0.75), both
/// endpoints at least 20% above the minimum.
fn criterion_1() -> Outcome {
    timed(Duration::from_secs(60), || {
        let values: Vec<f64> = (5..=95).map(|i| i as f64 / 100.0).collect();
        let mut pass = true;
        let mut parts = Vec::new();
        for (name, t) in engines() {
            let cfg = SolverConfig::for_topology(&t);
            let pts = sweep(&t, &t.initial_splits(), 1, late_path(&t), &values, &cfg).unwrap();
            let obj: Vec<f64> = pts.iter().map(|p| p.objective.unwrap()).collect();
            let (imin, min) = obj
                .iter()
                .cloned()
                .enumerate()
                .fold((0, f64::INFINITY), |a, (i, v)| if v < a.1 { (i, v) } else { a });
            let arg = values[imin];
            let left = obj[0] / min - 1.0;
            let right = obj[obj.len() - 1] / min - 1.0;
            pass &= arg > 0.25 && arg < 0.75 && left >= 0.2 && right >= 0.2;
            parts.push(format!(
                "{name} argmin p_late={arg:.2}, endpoints +{:.0}% / +{:.0}%",
                100.0 * left,
                100.0 * right
            ));
        }
        Outcome { pass, detail: parts.join("; ") }
    })
}

/// BH objective within 1e-3 of a 0.005 grid search, both w' rules.
fn criterion_2() -> Outcome {
    timed(Duration::from_secs(30), || {
        let mut pass = true;
        let mut parts = Vec::new();
        for (name, t) in engines() {
            let cfg = SolverConfig::for_topology(&t);
            let grid = grid_search(&t, 0.005, &cfg).unwrap().policy.objective_value;
            for rule in [WPrimeRule::LiteralPseudocode, WPrimeRule::MaxMinSlack] {
                let bh = BhConfig { wprime_rule: rule, ..BhConfig::default() };
                let (p, _) = bh_optimize(&t, &t.initial_splits(), &cfg, &bh).unwrap();
                let gap = p.objective_value - grid;
                pass &= gap <= 1e-3;
                parts.push(format!("{name} {rule:?} gap {gap:.2e}"));
            }
        }
        Outcome { pass, detail: parts.join("; ") }
    })
}

/// Flow 2's per-path exceedances agree within 0.05 at the M/D/1 optimum.
fn criterion_3() -> Outcome {
    let t = fig2().with_service_model(ServiceModel::Deterministic);
    let cfg = SolverConfig::for_topology(&t);
    let (p, _) = bh_optimize(&t, &t.initial_splits(), &cfg, &BhConfig::default()).unwrap();
    let deltas: Vec<f64> = t.flow_paths(1).iter().map(|&w| p.path_delta[w]).collect();
    let spread = deltas.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - deltas.iter().cloned().fold(f64::INFINITY, f64::min);
    Outcome {
        pass: spread <= 0.05,
        detail: format!("path deltas {:.3e} / {:.3e}, spread {spread:.2e}", deltas[0], deltas[1]),
    }
}

/// Hypoexponential closed form vs. lattice convolution on random paths.
fn criterion_4() -> Outcome {
    timed(Duration::from_secs(20), || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let omega = 5.0;
        let cfg = SolverConfig { step: 1e-3 * omega, horizon: 20.0, tail_tol: 1e-4, md1_series_terms: 200 };
        let mut worst: f64 = 0.0;
        let mut paths = 0;
        while paths < 50 {
            let len = rng.random_range(2..=4);
            let members: Vec<TravelTimeDistribution> = (0..len)
                .map(|_| {
                    let mu = rng.random_range(2.0..6.0);
                    let slack = rng.random_range(1.0..4.0f64).min(mu - 0.1);
                    let q = RoadQueue { id: "q".into(), service: ServiceModel::Markovian, mu_max: mu, mu };
                    sojourn_distribution(&q, mu - slack, &cfg).unwrap()
                })
                .collect();
            let refs: Vec<&TravelTimeDistribution> = members.iter().collect();
            let closed = path_distribution(&refs, &cfg).unwrap();
            if closed.kind() != DistributionKind::ClosedForm {
                continue; // two slacks coincided
            }
            let gridded = convolved_path_distribution(&refs, &cfg).unwrap();
            for i in 0..=4000 {
                let x = cfg.horizon * i as f64 / 4000.0;
                worst = worst.max((closed.cdf(x) - gridded.cdf(x)).abs());
            }
            paths += 1;
        }
        Outcome { pass: worst <= 1e-3, detail: format!("{paths} paths, sup distance {worst:.2e}") }
    })
}

/// Simulation vs. analytics: single queues by KS, Fig. 2 by exceedance.
fn criterion_5() -> Outcome {
    timed(Duration::from_secs(120), || {
        let mut pass = true;
        let mut parts = Vec::new();
        for (service, name) in [("M", "M/M/1"), ("D", "M/D/1")] {
            let doc = format!(
                r#"{{"queues":[{{"id":"a","mu_max":3,"service":"{service}"}}],
                   "flows":[{{"id":"x","ingress":"a","egress":"a","rate":1,"omega":2}}]}}"#
            );
            let t = queuenet::load_topology(&doc).unwrap().enumerate_paths().unwrap();
            let cfg = SolverConfig::for_topology(&t);
            let r = simulate(&t, &t.initial_splits(), &SimConfig { n_vehicles: 100_000, ..SimConfig::default() })
                .unwrap();
            let dist = if service == "M" {
                // exact M/M/1 sojourn: exponential with rate μ − λ = 2
                TravelTimeDistribution::ClosedForm(queuenet::traveltime::ClosedForm::exponential(2.0, cfg.horizon))
            } else {
                path_distributions(&t, &t.initial_splits(), &cfg).unwrap().remove(0)
            };
            let ks = ks_distance(&r.flow_samples[0], &dist).unwrap();
            pass &= ks <= 0.02;
            parts.push(format!("{name} KS {ks:.4}"));
        }
        for (name, t) in engines() {
            let cfg = SolverConfig::for_topology(&t);
            let (p, _) = bh_optimize(&t, &t.initial_splits(), &cfg, &BhConfig::default()).unwrap();
            let r = simulate(&t, &p.splits, &SimConfig { n_vehicles: 200_000, ..SimConfig::default() }).unwrap();
            let diffs: Vec<f64> = (0..2).map(|k| (r.flow_delta[k] - p.flow_delta[k]).abs()).collect();
            pass &= diffs.iter().all(|&d| d <= 0.02);
            parts.push(format!("Fig. 2 {name} |delta diff| {diffs:.4?}"));
        }
        Outcome { pass, detail: parts.join("; ") }
    })
}

/// Independent forward evaluation: product of α along each path.
fn forward(t: &Topology, alphas: &AlphaMap) -> Vec<f64> {
    t.paths
        .iter()
        .map(|p| {
            p.queues
                .windows(2)
                .map(|l| alphas[&(p.flow, l[0], l[1])])
                .product()
        })
        .collect()
}

/// α reconstruction followed by the path-product formula returns the splits.
fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for t in [fig2(), fig2_listing()] {
        for _ in 0..100 {
            let s = random_splits(&t, &mut rng);
            let rec = reconstruct_alphas(&t, &s).unwrap();
            for (a, b) in forward(&t, &rec.alphas).iter().zip(&s.0) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Outcome { pass: worst <= 1e-9, detail: format!("200 split vectors, max |p - p_hat| {worst:.2e}") }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn invariants(seed: u64) -> Result<(), TestCaseError> {
    let t = random_topology(seed, seed % 3 != 0);
    let cfg = coarse_config(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = random_splits(&t, &mut rng);

    let bh = BhConfig { max_iterations: 200, ..BhConfig::default() };
    let (policy, trace) = bh_optimize(&t, &start, &cfg, &bh).unwrap();
    check(trace.steps.len() <= bh.max_iterations, || "trace too long".into())?;
    for step in &trace.steps {
        for k in 0..t.flows.len() {
            let sum = step.splits.flow_sum(&t, k);
            check((sum - 1.0).abs() <= 1e-12, || format!("iteration {}: flow {k} sums to {sum}", step.iteration))?;
        }
        check(step.splits.0.iter().all(|p| (0.0..=1.0).contains(p)), || "split outside [0, 1]".into())?;
    }
    let accepted: Vec<f64> = trace.accepted().map(|s| s.objective_after).collect();
    check(accepted.windows(2).all(|w| w[1] < w[0]), || format!("accepted objectives {accepted:?}"))?;

    for dist in path_distributions(&t, &policy.splits, &cfg).unwrap() {
        let v: Vec<f64> = (0..=2000).map(|i| dist.cdf(cfg.horizon * i as f64 / 2000.0)).collect();
        check(v.windows(2).all(|w| w[1] >= w[0]), || "CDF decreases".into())?;
        check(v.iter().all(|x| (0.0..=1.0).contains(x)), || "CDF outside [0, 1]".into())?;
    }

    let r = simulate(&t, &policy.splits, &SimConfig { n_vehicles: 20_000, seed, ..SimConfig::default() }).unwrap();
    for (q, s) in t.queues.iter().zip(&r.queue_stats) {
        check(s.little_residual() <= 0.03, || format!("Little residual {} at {}", s.little_residual(), q.id))?;
    }
    Ok(())
}

/// BH, CDF and simulation invariants on random small networks.
fn criterion_7() -> Outcome {
    let mut runner = TestRunner::new(PropConfig { cases: 24, failure_persistence: None, ..PropConfig::default() });
    match runner.run(&any::<u64>(), invariants) {
        Ok(()) => Outcome { pass: true, detail: "24 random networks (<= 8 queues, <= 3 flows)".into() },
        Err(e) => Outcome { pass: false, detail: e.to_string() },
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 objective curve over p_late (both engines)", criterion_1),
        ("2 bottleneck hunting vs grid search", criterion_2),
        ("3 equal path exceedance at the M/D/1 optimum", criterion_3),
        ("4 closed form vs convolution", criterion_4),
        ("5 simulation cross-validation", criterion_5),
        ("6 alpha round trip", criterion_6),
        ("7 invariant suites", criterion_7),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let out = f();
        println!("{} criterion {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
