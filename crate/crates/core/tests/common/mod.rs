#![allow(dead_code)]

use queuenet::model::{load_topology, Splits, Topology};
use queuenet::traveltime::SolverConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIG2: &str = include_str!("../../../../data/fig2.topo");
pub const FIG2_LISTING: &str = include_str!("../../../../data/fig2_listing.topo");

pub fn fig2() -> Topology {
    load_topology(FIG2).unwrap().enumerate_paths().unwrap()
}

pub fn fig2_listing() -> Topology {
    load_topology(FIG2_LISTING).unwrap().enumerate_paths().unwrap()
}

/// Fig. 2 splits with the given share on flow 2's late path.
pub fn with_late(t: &Topology, late: f64) -> Splits {
    let mut s = t.initial_splits();
    let early = t.path_by_signature(1, "q2-q3-q5").unwrap();
    let l = t.path_by_signature(1, "q2-q4-q5").unwrap();
    s.0[early] = 1.0 - late;
    s.0[l] = late;
    s
}

/// Random layered network: 3–8 queues, links i→i+1 and i→i+2, 1–3 flows.
/// Every μ exceeds the total offered rate by at least 1, so any split is
/// stable.
pub fn random_topology(seed: u64, markovian_only: bool) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=8usize);
    let n_flows = rng.random_range(1..=3usize);
    let rates: Vec<f64> = (0..n_flows).map(|_| rng.random_range(0.3..1.2)).collect();
    let total: f64 = rates.iter().sum();

    let queues: Vec<String> = (0..n)
        .map(|i| {
            let service = if markovian_only || rng.random_bool(0.5) { "M" } else { "D" };
            let mu = total + rng.random_range(1.0..3.0);
            format!(r#"{{"id":"n{i}","mu_max":{mu},"service":"{service}"}}"#)
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        if i + 1 < n {
            edges.push(format!(r#"{{"from":"n{i}","to":"n{}"}}"#, i + 1));
        }
        if i + 2 < n && rng.random_bool(0.6) {
            edges.push(format!(r#"{{"from":"n{i}","to":"n{}"}}"#, i + 2));
        }
    }
    let flows: Vec<String> = rates
        .iter()
        .enumerate()
        .map(|(k, rate)| {
            let ingress = rng.random_range(0..n - 1);
            let egress = rng.random_range(ingress + 1..n);
            let omega = rng.random_range(3.0..6.0);
            format!(
                r#"{{"id":"f{k}","ingress":"n{ingress}","egress":"n{egress}","rate":{rate},"omega":{omega}}}"#
            )
        })
        .collect();
    let doc = format!(
        r#"{{"queues":[{}],"edges":[{}],"flows":[{}]}}"#,
        queues.join(","),
        edges.join(","),
        flows.join(",")
    );
    load_topology(&doc).unwrap().enumerate_paths().unwrap()
}

/// Uniformly random point of each flow's split simplex.
pub fn random_splits(t: &Topology, rng: &mut impl Rng) -> Splits {
    let mut s = vec![0.0; t.paths.len()];
    for k in 0..t.flows.len() {
        let paths = t.flow_paths(k);
        let w: Vec<f64> = paths.iter().map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
        let total: f64 = w.iter().sum();
        for (&p, v) in paths.iter().zip(w) {
            s[p] = v / total;
        }
    }
    Splits(s)
}

/// Coarse lattice so property tests over many topologies stay fast.
pub fn coarse_config(t: &Topology) -> SolverConfig {
    let mut cfg = SolverConfig::for_topology(t);
    cfg.step *= 10.0;
    cfg
}
