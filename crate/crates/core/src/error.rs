use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong while loading, evaluating, optimizing or
/// simulating a queue network.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema violation at `{id}`: {msg}")]
    Schema { id: String, msg: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("dangling reference: `{owner}` refers to undeclared queue `{target}`")]
    DanglingReference { owner: String, target: String },

    #[error("nonpositive rate on `{id}`: {value}")]
    NonpositiveRate { id: String, value: f64 },

    #[error("cycle detected through queue `{0}` on a flow-reachable subgraph")]
    Cycle(String),

    #[error("flow `{0}` has no path from its ingress to its egress queue")]
    Unreachable(String),

    #[error("queue `{queue}` is unstable: arrival rate {lambda} >= service rate {mu}")]
    Unstable { queue: String, lambda: f64, mu: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("horizon {horizon} too short: {detail}; enlarge the horizon")]
    Horizon { horizon: f64, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("grid search over {0} split degrees of freedom is too expensive (max 3)")]
    Dimensionality(usize),

    #[error("simulation diverged at queue `{queue}`: occupancy {occupancy} exceeded cap {cap}")]
    Diverged {
        queue: String,
        occupancy: usize,
        cap: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by a queue whose load reaches its capacity.
    pub fn is_instability(&self) -> bool {
        matches!(self, Error::Unstable { .. } | Error::Diverged { .. })
    }

    pub fn is_parse(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Schema { .. }
                | Error::DuplicateId(_)
                | Error::DanglingReference { .. }
                | Error::NonpositiveRate { .. }
        )
    }
}
