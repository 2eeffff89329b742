//! Exhaustive evaluation of the objective on split grids.

use rayon::prelude::*;

use super::Policy;
use crate::error::{Error, Result};
use crate::model::{Splits, Topology};
use crate::traveltime::{evaluate, Evaluation, SolverConfig};

#[derive(Debug, Clone)]
pub struct GridSearch {
    pub policy: Policy,
    /// Every grid point with its objective, `None` where some queue is unstable.
    pub points: Vec<(Splits, Option<f64>)>,
}

/// All vectors of `parts` nonnegative multiples of 1/`m` summing to one,
/// in lexicographic order.
pub fn simplex_grid(parts: usize, m: usize) -> Vec<Vec<f64>> {
    fn rec(parts: usize, left: usize, m: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if parts == 1 {
            prefix.push(left);
            out.push(prefix.iter().map(|&c| c as f64 / m as f64).collect());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(parts - 1, left - c, m, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        rec(parts, m, m, &mut Vec::new(), &mut out);
    }
    out
}

fn steps_for(resolution: f64) -> Result<usize> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Config(format!("resolution {resolution} outside (0, 1]")));
    }
    let m = (1.0 / resolution).round();
    if (m * resolution - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("1/resolution must be an integer, got {resolution}")));
    }
    Ok(m as usize)
}

/// Evaluates the objective on the product of per-flow simplex grids with
/// spacing `resolution` and returns the minimizer (first in grid order on
/// ties).
pub fn grid_search(topology: &Topology, resolution: f64, config: &SolverConfig) -> Result<GridSearch> {
    let dof = topology.degrees_of_freedom();
    if dof > 3 {
        return Err(Error::Dimensionality(dof));
    }
    config.validate(topology)?;
    let m = steps_for(resolution)?;

    let mut candidates = vec![vec![0.0; topology.paths.len()]];
    for k in 0..topology.flows.len() {
        let paths = topology.flow_paths(k);
        let local = simplex_grid(paths.len(), m);
        candidates = candidates
            .iter()
            .flat_map(|base| {
                local.iter().map(move |choice| {
                    let mut s = base.clone();
                    for (&w, &v) in paths.iter().zip(choice) {
                        s[w] = v;
                    }
                    s
                })
            })
            .collect();
    }

    let evaluated: Vec<(Splits, Option<Evaluation>)> = candidates
        .into_par_iter()
        .map(|s| {
            let s = Splits(s);
            let e = evaluate(topology, &s, config);
            match e {
                Ok(e) => Ok((s, Some(e))),
                Err(err) if err.is_instability() => Ok((s, None)),
                Err(err) => Err(err),
            }
        })
        .collect::<Result<_>>()?;

    let best = evaluated
        .iter()
        .enumerate()
        .filter_map(|(i, (_, e))| e.as_ref().map(|e| (i, e.objective)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .ok_or_else(|| Error::Infeasible("every grid point leaves some queue unstable".into()))?
        .0;

    let points = evaluated
        .iter()
        .map(|(s, e)| (s.clone(), e.as_ref().map(|e| e.objective)))
        .collect();
    let (splits, eval) = evaluated.into_iter().nth(best).expect("index in range");
    let policy = Policy::from_evaluation(topology, splits, eval.expect("best point is stable"))?;
    Ok(GridSearch { policy, points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Split of the swept path.
    pub value: f64,
    pub splits: Splits,
    /// `None` where some queue is unstable.
    pub objective: Option<f64>,
    pub flow_delta: Option<Vec<f64>>,
}

/// Objective as a function of one path's split, for a flow with exactly two
/// paths; the other flows keep their splits from `base`.
pub fn sweep(
    topology: &Topology,
    base: &Splits,
    flow: usize,
    path: usize,
    values: &[f64],
    config: &SolverConfig,
) -> Result<Vec<SweepPoint>> {
    let paths = topology.flow_paths(flow);
    if paths.len() != 2 {
        return Err(Error::Config(format!(
            "flow `{}` has {} paths; a sweep needs exactly 2",
            topology.flows[flow].id,
            paths.len()
        )));
    }
    let Some(&other) = paths.iter().find(|&&w| w != path) else {
        return Err(Error::Config(format!("path {path} does not belong to flow {flow}")));
    };
    if !paths.contains(&path) {
        return Err(Error::Config(format!("path {path} does not belong to flow {flow}")));
    }
    config.validate(topology)?;
    values
        .par_iter()
        .map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("split value {v} outside [0, 1]")));
            }
            let mut s = base.clone();
            s.0[path] = v;
            s.0[other] = 1.0 - v;
            match evaluate(topology, &s, config) {
                Ok(e) => Ok(SweepPoint {
                    value: v,
                    splits: s,
                    objective: Some(e.objective),
                    flow_delta: Some(e.flow_delta),
                }),
                Err(err) if err.is_instability() => Ok(SweepPoint {
                    value: v,
                    splits: s,
                    objective: None,
                    flow_delta: None,
                }),
                Err(err) => Err(err),
            }
        })
        .collect()
}
