use std::path::Path;

use anyhow::Result;
use queuenet::model::{compute_arrival_rates, Splits, Topology};
use queuenet::optimizer::{self, bh_optimize, grid_search, BhConfig, Policy};
use queuenet::policy::{Engine, PolicyFile};
use queuenet::simulator::{self, ks_distance, SimConfig, SimResult};
use queuenet::traveltime::{
    convolved_path_distribution, evaluate, path_distributions, queue_distributions,
    DistributionKind, Evaluation, SolverConfig, TravelTimeDistribution,
};
use queuenet::read_topology;
use serde_json::json;

use crate::output::{num, opt_num, OutDir};
use crate::{BhArgs, CdfArgs, OptimizeArgs, SimArgs, SimulateArgs, SolverArgs, SweepArgs, SweepEngineArg, ValidateArgs};

const FLOW_DELTA_TOL: f64 = 0.02;
const SINGLE_QUEUE_KS: f64 = 0.02;
const MULTI_QUEUE_KS: f64 = 0.05;
const LITTLE_TOL: f64 = 0.03;

fn load(path: &Path, engine: Option<Engine>) -> Result<Topology> {
    let topology = read_topology(path)?;
    Ok(match engine {
        Some(e) => e.apply(&topology),
        None => topology,
    })
}

fn solver_config(topology: &Topology, args: &SolverArgs, base: Option<SolverConfig>) -> Result<SolverConfig> {
    let mut cfg = base.unwrap_or_else(|| SolverConfig::for_topology(topology));
    if let Some(step) = args.step {
        cfg.step = step;
    }
    if let Some(horizon) = args.horizon {
        cfg.horizon = horizon;
    }
    cfg.validate(topology)?;
    Ok(cfg)
}

fn bh_config(args: &BhArgs) -> Result<BhConfig> {
    let cfg = BhConfig {
        phi0: args.phi0,
        phi_min: args.phi_min,
        wprime_rule: args.wprime_rule.into(),
        max_iterations: args.max_iterations,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn sim_config(args: &SimArgs) -> Result<SimConfig> {
    let cfg = SimConfig {
        n_vehicles: args.n_vehicles,
        seed: args.seed,
        warmup_fraction: args.warmup,
        ..SimConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Topology with the policy's engine (or the override) and service rates.
fn load_with_policy(
    topology: &Path,
    policy: &Path,
    engine: Option<Engine>,
) -> Result<(Topology, PolicyFile, Splits)> {
    let mut file = PolicyFile::read(policy)?;
    if engine.is_some() {
        file.engine = engine;
    }
    let t = file.apply(&read_topology(topology)?)?;
    let splits = file.splits(&t)?;
    Ok((t, file, splits))
}

fn flow_deltas(t: &Topology, deltas: &[f64]) -> String {
    t.flows
        .iter()
        .zip(deltas)
        .map(|(f, d)| format!("{}={}", f.id, num(*d)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn optimize(a: OptimizeArgs) -> Result<bool> {
    let engine = a.engine.map(Engine::from);
    let t = load(&a.topology, engine)?;
    let solver = solver_config(&t, &a.solver, None)?;
    let bh = bh_config(&a.bh)?;
    let initial = match &a.init {
        Some(p) => PolicyFile::read(p)?.splits(&t)?,
        None => t.initial_splits(),
    };
    let (policy, trace) = bh_optimize(&t, &initial, &solver, &bh)?;

    if let Some(notice) = &trace.notice {
        say!("notice: {notice}");
    }
    say!("objective {}", num(policy.objective_value));
    say!("delta {}", flow_deltas(&t, &policy.flow_delta));
    for (flow, paths) in t.splits_to_map(&policy.splits) {
        for (sig, p) in paths {
            say!("split {flow} {sig} {}", num(p));
        }
    }

    let mut out = OutDir::create(&a.out_dir)?;
    let file = PolicyFile::from_policy(&t, &policy, engine, Some(solver));
    let policy_path = out.path("policy.json");
    file.write(&policy_path)?;
    out.record(policy_path);
    let rows: Vec<Vec<String>> = trace
        .steps
        .iter()
        .map(|s| {
            vec![
                s.iteration.to_string(),
                num(s.phi),
                t.flows[s.k_star].id.clone(),
                t.path_signature(s.w_star),
                t.path_signature(s.w_prime),
                num(s.objective_before),
                num(s.objective_after),
                s.accepted.to_string(),
            ]
        })
        .collect();
    out.csv(
        "trace.csv",
        &["iteration", "phi", "k_star", "w_star", "w_prime", "objective_before", "objective", "accepted"],
        &rows,
    )?;
    out.finish(
        &a.topology,
        "optimize",
        json!({ "engine": engine.map(Engine::name), "solver": solver, "bh": bh, "init": a.init }),
    )?;
    Ok(true)
}

fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        n => (0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn sweep(a: SweepArgs) -> Result<bool> {
    let base = read_topology(&a.topology)?;
    let Some(flow) = base.flow_index(&a.flow) else {
        return Err(queuenet::Error::Schema { id: a.flow.clone(), msg: "unknown flow".into() }.into());
    };
    let paths = base.flow_paths(flow);
    if paths.len() != 2 {
        return Err(queuenet::Error::Config(format!(
            "flow `{}` has {} paths; a sweep needs exactly 2",
            a.flow,
            paths.len()
        ))
        .into());
    }
    let path = match &a.path {
        Some(sig) => base.path_by_signature(flow, sig).ok_or_else(|| queuenet::Error::Schema {
            id: sig.clone(),
            msg: format!("not a path of flow `{}`", a.flow),
        })?,
        None => paths[1],
    };
    if a.steps == 0 || !(0.0..=1.0).contains(&a.from) || !(0.0..=1.0).contains(&a.to) {
        return Err(queuenet::Error::Config("sweep range must lie in [0, 1] with at least one step".into()).into());
    }
    let values = linspace(a.from, a.to, a.steps);
    let engines: Vec<Option<Engine>> = match a.engine {
        None => vec![None],
        Some(SweepEngineArg::Mm1) => vec![Some(Engine::Mm1)],
        Some(SweepEngineArg::Md1) => vec![Some(Engine::Md1)],
        Some(SweepEngineArg::Both) => vec![Some(Engine::Mm1), Some(Engine::Md1)],
    };

    let mut header = vec![format!("p_{}", base.path_signature(path))];
    let mut columns: Vec<Vec<String>> = vec![values.iter().map(|&v| num(v)).collect()];
    let mut configs = Vec::new();
    for engine in &engines {
        let t = match engine {
            Some(e) => e.apply(&base),
            None => base.clone(),
        };
        let solver = solver_config(&t, &a.solver, None)?;
        configs.push(solver);
        let points = optimizer::sweep(&t, &t.initial_splits(), flow, path, &values, &solver)?;
        let label = engine.map_or("model", Engine::name);
        header.push(format!("objective_{label}"));
        columns.push(points.iter().map(|p| opt_num(p.objective)).collect());
        for (k, f) in t.flows.iter().enumerate() {
            header.push(format!("delta_{}_{label}", f.id));
            columns.push(
                points
                    .iter()
                    .map(|p| opt_num(p.flow_delta.as_ref().map(|d| d[k])))
                    .collect(),
            );
        }
        for p in &points {
            match p.objective {
                Some(o) => say!("{label} {} {}", num(p.value), num(o)),
                None => say!("{label} {} unstable", num(p.value)),
            }
        }
    }

    let rows: Vec<Vec<String>> = (0..values.len())
        .map(|i| columns.iter().map(|c| c[i].clone()).collect())
        .collect();
    let mut out = OutDir::create(&a.out_dir)?;
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("sweep.csv", &header, &rows)?;
    out.finish(
        &a.topology,
        "sweep",
        json!({
            "flow": a.flow,
            "path": base.path_signature(path),
            "values": values,
            "engines": engines.iter().map(|e| e.map_or("model", Engine::name)).collect::<Vec<_>>(),
            "solver": configs,
        }),
    )?;
    Ok(true)
}

fn path_label(t: &Topology, w: usize) -> String {
    format!("{}:{}", t.flows[t.paths[w].flow].id, t.path_signature(w))
}

pub fn cdf(a: CdfArgs) -> Result<bool> {
    let (t, file, splits) = load_with_policy(&a.topology, &a.policy, a.engine.map(Engine::from))?;
    let solver = solver_config(&t, &a.solver, file.solver)?;
    let eval = evaluate(&t, &splits, &solver)?;
    let dists = path_distributions(&t, &splits, &solver)?;

    let max_omega = t.flows.iter().map(|f| f.omega).fold(0.0, f64::max);
    let t_max = a.t_max.unwrap_or(2.0 * max_omega);
    let times = linspace(0.0, t_max.min(solver.horizon), a.points.max(2));

    let mut header = vec!["t".to_string()];
    header.extend((0..t.paths.len()).map(|w| path_label(&t, w)));
    let rows: Vec<Vec<String>> = times
        .iter()
        .map(|&x| {
            std::iter::once(num(x))
                .chain(dists.iter().map(|d| num(d.cdf(x))))
                .collect()
        })
        .collect();

    let mut summary = Vec::new();
    for (k, f) in t.flows.iter().enumerate() {
        for &w in t.flow_paths(k) {
            summary.push(vec![
                f.id.clone(),
                num(f.omega),
                t.path_signature(w),
                num(splits.get(w)),
                num(eval.path_delta[w]),
                num(eval.flow_delta[k]),
            ]);
        }
    }

    say!("objective {}", num(eval.objective));
    say!("delta {}", flow_deltas(&t, &eval.flow_delta));
    let mut out = OutDir::create(&a.out_dir)?;
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("cdf.csv", &header, &rows)?;
    out.csv(
        "cdf_summary.csv",
        &["flow", "omega", "path", "split", "delta_path", "delta_flow"],
        &summary,
    )?;
    out.finish(
        &a.topology,
        "cdf",
        json!({ "policy": a.policy, "engine": file.engine.map(Engine::name), "solver": solver, "points": times.len(), "t_max": t_max }),
    )?;
    Ok(true)
}

struct Check {
    name: String,
    pass: bool,
    asserted: bool,
    detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
        Check { name: name.into(), pass, asserted: true, detail: detail.into() }
    }

    fn line(&self) -> String {
        let status = match (self.asserted, self.pass) {
            (false, _) => "INFO",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        };
        format!("{status} {}: {}", self.name, self.detail)
    }
}

/// Analytical vs. simulated exceedance, KS per path and Little's law per queue.
fn simulation_checks(
    t: &Topology,
    eval: &Evaluation,
    dists: &[TravelTimeDistribution],
    r: &SimResult,
) -> Vec<Check> {
    let mut checks = Vec::new();
    for (k, f) in t.flows.iter().enumerate() {
        let diff = (r.flow_delta[k] - eval.flow_delta[k]).abs();
        checks.push(Check::new(
            format!("flow {} delta", f.id),
            diff <= FLOW_DELTA_TOL,
            format!(
                "analytical {} empirical {} |diff| {} <= {FLOW_DELTA_TOL}",
                num(eval.flow_delta[k]),
                num(r.flow_delta[k]),
                num(diff)
            ),
        ));
    }
    for (w, p) in t.paths.iter().enumerate() {
        let samples = &r.path_samples[w];
        let Ok(ks) = ks_distance(samples, &dists[w]) else {
            continue;
        };
        let single = p.queues.len() == 1;
        let threshold = if single { SINGLE_QUEUE_KS } else { MULTI_QUEUE_KS };
        let mut c = Check::new(
            format!("path {} ks", path_label(t, w)),
            ks <= threshold,
            format!("{} over {} samples, threshold {threshold}", num(ks), samples.len()),
        );
        c.asserted = single;
        checks.push(c);
    }
    for (q, s) in t.queues.iter().zip(&r.queue_stats) {
        if s.arrivals == 0 {
            continue;
        }
        let res = s.little_residual();
        checks.push(Check::new(
            format!("queue {} little", q.id),
            res <= LITTLE_TOL,
            format!(
                "L {} lambda {} W {} residual {} <= {LITTLE_TOL}",
                num(s.mean_occupancy),
                num(s.arrival_rate),
                num(s.mean_sojourn),
                num(res)
            ),
        ));
    }
    checks
}

fn report(out: &mut OutDir, checks: &[Check]) -> Result<bool> {
    let text: String = checks.iter().map(|c| c.line() + "\n").collect();
    say!("{}", text.trim_end());
    out.text("report.txt", &text)?;
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| vec![c.name.clone(), c.pass.to_string(), c.asserted.to_string(), c.detail.clone()])
        .collect();
    out.csv("checks.csv", &["check", "pass", "asserted", "detail"], &rows)?;
    Ok(checks.iter().all(|c| c.pass || !c.asserted))
}

pub fn simulate(a: SimulateArgs) -> Result<bool> {
    let (t, file, splits) = load_with_policy(&a.topology, &a.policy, a.engine.map(Engine::from))?;
    let solver = solver_config(&t, &a.solver, file.solver)?;
    let sim = sim_config(&a.sim)?;
    let r = simulator::simulate(&t, &splits, &sim)?;
    let eval = evaluate(&t, &splits, &solver)?;
    let dists = path_distributions(&t, &splits, &solver)?;

    let mut out = OutDir::create(&a.out_dir)?;
    let rows: Vec<Vec<String>> = r
        .vehicles
        .iter()
        .map(|v| {
            vec![
                v.id.to_string(),
                t.flows[v.flow].id.clone(),
                t.path_signature(v.path),
                num(v.entry),
                num(v.exit),
            ]
        })
        .collect();
    out.csv("samples.csv", &["vehicle_id", "flow_id", "path_signature", "entry_time", "exit_time"], &rows)?;

    let mut summary = Vec::new();
    for (k, f) in t.flows.iter().enumerate() {
        summary.push(vec![
            "flow".into(),
            f.id.clone(),
            num(eval.flow_delta[k]),
            num(r.flow_delta[k]),
            String::new(),
            r.flow_samples[k].len().to_string(),
        ]);
    }
    for w in 0..t.paths.len() {
        let ks = ks_distance(&r.path_samples[w], &dists[w]).ok();
        summary.push(vec![
            "path".into(),
            path_label(&t, w),
            num(eval.path_delta[w]),
            num(r.path_delta[w]),
            opt_num(ks),
            r.path_samples[w].len().to_string(),
        ]);
    }
    out.csv(
        "sim_summary.csv",
        &["level", "id", "analytical_delta", "empirical_delta", "ks", "samples"],
        &summary,
    )?;
    report(&mut out, &simulation_checks(&t, &eval, &dists, &r))?;
    out.finish(
        &a.topology,
        "simulate",
        json!({ "policy": a.policy, "engine": file.engine.map(Engine::name), "solver": solver, "sim": sim }),
    )?;
    Ok(true)
}

fn sup_distance(a: &TravelTimeDistribution, b: &TravelTimeDistribution, until: f64) -> f64 {
    linspace(0.0, until, 2001)
        .into_iter()
        .map(|x| (a.cdf(x) - b.cdf(x)).abs())
        .fold(0.0, f64::max)
}

pub fn validate(a: ValidateArgs) -> Result<bool> {
    let engine = a.engine.map(Engine::from);
    let t = load(&a.topology, engine)?;
    let solver = solver_config(&t, &a.solver, None)?;
    let bh = bh_config(&a.bh)?;
    let sim = sim_config(&a.sim)?;
    let mut checks = Vec::new();

    let initial = t.initial_splits();
    let sums_ok = (0..t.flows.len()).all(|k| (initial.flow_sum(&t, k) - 1.0).abs() <= 1e-12);
    checks.push(Check::new("initial splits sum to one", sums_ok, "per flow within 1e-12"));

    let (policy, trace) = bh_optimize(&t, &initial, &solver, &bh)?;
    let accepted: Vec<f64> = trace.accepted().map(|s| s.objective_after).collect();
    let decreasing = accepted.windows(2).all(|w| w[1] < w[0])
        && trace.accepted().all(|s| s.objective_after < s.objective_before);
    checks.push(Check::new(
        "accepted objectives decrease",
        decreasing,
        format!("{} accepted of {} iterations", accepted.len(), trace.steps.len()),
    ));
    let final_sums = (0..t.flows.len()).all(|k| (policy.splits.flow_sum(&t, k) - 1.0).abs() <= 1e-12);
    checks.push(Check::new("optimized splits sum to one", final_sums, "per flow within 1e-12"));

    if t.degrees_of_freedom() <= 3 {
        let grid = grid_search(&t, a.grid_resolution, &solver)?;
        let gap = policy.objective_value - grid.policy.objective_value;
        checks.push(Check::new(
            "bottleneck hunting vs grid search",
            gap <= 1e-3,
            format!(
                "bh {} grid {} (resolution {}) gap {} <= 1e-3",
                num(policy.objective_value),
                num(grid.policy.objective_value),
                a.grid_resolution,
                num(gap)
            ),
        ));
    } else {
        let mut c = Check::new("bottleneck hunting vs grid search", true, "skipped: more than 3 degrees of freedom");
        c.asserted = false;
        checks.push(c);
    }

    checks.push(alpha_check(&t, &policy));
    let residual = optimizer::flow_conservation_residuals(&t, &policy.splits)?
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(Check::new("junction balance", residual <= 1e-9, format!("max residual {}", num(residual))));

    let dists = path_distributions(&t, &policy.splits, &solver)?;
    let monotone = dists.iter().all(|d| {
        let v: Vec<f64> = linspace(0.0, solver.horizon, 4001).into_iter().map(|x| d.cdf(x)).collect();
        v.windows(2).all(|w| w[1] >= w[0]) && v.iter().all(|x| (0.0..=1.0).contains(x))
    });
    checks.push(Check::new("path CDFs monotone", monotone, format!("{} paths", dists.len())));

    let rates = compute_arrival_rates(&t, &policy.splits, true)?;
    let per_queue = queue_distributions(&t, &rates, &solver)?;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for (w, p) in t.paths.iter().enumerate() {
        if dists[w].kind() != DistributionKind::ClosedForm || p.queues.len() < 2 {
            continue;
        }
        let members: Vec<&TravelTimeDistribution> =
            p.queues.iter().map(|&q| per_queue[q].as_ref().expect("queue on a path")).collect();
        let gridded = convolved_path_distribution(&members, &solver)?;
        worst = worst.max(sup_distance(&dists[w], &gridded, solver.horizon));
        compared += 1;
    }
    if compared > 0 {
        checks.push(Check::new(
            "closed form vs convolution",
            worst <= 1e-3,
            format!("sup distance {} over {compared} paths", num(worst)),
        ));
    }

    let eval = evaluate(&t, &policy.splits, &solver)?;
    let r = simulator::simulate(&t, &policy.splits, &sim)?;
    checks.extend(simulation_checks(&t, &eval, &dists, &r));

    let mut out = OutDir::create(&a.out_dir)?;
    let ok = report(&mut out, &checks)?;
    out.finish(
        &a.topology,
        "validate",
        json!({ "engine": engine.map(Engine::name), "solver": solver, "bh": bh, "sim": sim, "grid_resolution": a.grid_resolution }),
    )?;
    if !ok {
        eprintln!("validation failed");
    }
    Ok(ok)
}

fn alpha_check(t: &Topology, policy: &Policy) -> Check {
    let rec = &policy.alphas;
    let sums = optimizer::junction_sums(&rec.alphas);
    let over = sums.values().cloned().fold(0.0, f64::max);
    let mut c = Check::new(
        "alpha round trip",
        rec.max_reproduction_error <= 1e-9 && over <= 1.0 + 1e-9,
        format!(
            "reproduction error {} max junction sum {} rank {}/{}",
            num(rec.max_reproduction_error),
            num(over),
            rec.rank,
            rec.unknowns
        ),
    );
    if t.paths.is_empty() {
        c.asserted = false;
    }
    c
}

