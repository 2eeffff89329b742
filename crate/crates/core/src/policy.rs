//! Policy files: the optimized splits in the same shape as a topology's
//! `initial_splits` block, plus transition probabilities and the settings
//! that produced them.

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ServiceModel, SplitMap, Splits, Topology};
use crate::optimizer::Policy;
use crate::traveltime::SolverConfig;

/// Which sojourn model every queue uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Mm1,
    Md1,
}

impl Engine {
    pub fn service_model(self) -> ServiceModel {
        match self {
            Engine::Mm1 => ServiceModel::Markovian,
            Engine::Md1 => ServiceModel::Deterministic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Engine::Mm1 => "mm1",
            Engine::Md1 => "md1",
        }
    }

    pub fn apply(self, topology: &Topology) -> Topology {
        topology.with_service_model(self.service_model())
    }
}

/// Key of a link in the `alphas` block.
pub fn link_key(topology: &Topology, from: usize, to: usize) -> String {
    format!("{}>{}", topology.queues[from].id, topology.queues[to].id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    /// flow → path signature → split.
    pub initial_splits: SplitMap,
    /// flow → "from>to" → α.
    #[serde(default)]
    pub alphas: BTreeMap<String, BTreeMap<String, f64>>,
    /// queue → μ.
    #[serde(default)]
    pub service_rates: BTreeMap<String, f64>,
    #[serde(default)]
    pub objective: Option<f64>,
    #[serde(default)]
    pub flow_delta: BTreeMap<String, f64>,
    #[serde(default)]
    pub alpha_reproduction_error: Option<f64>,
    #[serde(default)]
    pub engine: Option<Engine>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
}

impl PolicyFile {
    pub fn from_policy(
        topology: &Topology,
        policy: &Policy,
        engine: Option<Engine>,
        solver: Option<SolverConfig>,
    ) -> PolicyFile {
        let mut alphas: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (&(k, i, j), &a) in &policy.alphas.alphas {
            alphas
                .entry(topology.flows[k].id.clone())
                .or_default()
                .insert(link_key(topology, i, j), a);
        }
        PolicyFile {
            initial_splits: topology.splits_to_map(&policy.splits),
            alphas,
            service_rates: topology
                .queues
                .iter()
                .zip(&policy.service_rates)
                .map(|(q, &mu)| (q.id.clone(), mu))
                .collect(),
            objective: Some(policy.objective_value),
            flow_delta: topology
                .flows
                .iter()
                .zip(&policy.flow_delta)
                .map(|(f, &d)| (f.id.clone(), d))
                .collect(),
            alpha_reproduction_error: Some(policy.alphas.max_reproduction_error),
            engine,
            solver,
        }
    }

    pub fn parse(source: &str) -> Result<PolicyFile> {
        serde_json::from_str(source).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read(path: impl AsRef<FsPath>) -> Result<PolicyFile> {
        PolicyFile::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn write(&self, path: impl AsRef<FsPath>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn splits(&self, topology: &Topology) -> Result<Splits> {
        topology.splits_from_map(&self.initial_splits)
    }

    /// A copy of `topology` with the file's engine and service rates applied.
    pub fn apply(&self, topology: &Topology) -> Result<Topology> {
        let mut t = match self.engine {
            Some(e) => e.apply(topology),
            None => topology.clone(),
        };
        for (id, &mu) in &self.service_rates {
            let i = t.queue_index(id).ok_or_else(|| Error::Schema {
                id: id.clone(),
                msg: "unknown queue in service_rates".into(),
            })?;
            if !(mu.is_finite() && mu > 0.0) {
                return Err(Error::NonpositiveRate { id: id.clone(), value: mu });
            }
            t.queues[i].mu = mu;
        }
        Ok(t)
    }
}
