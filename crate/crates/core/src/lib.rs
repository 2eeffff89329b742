//! Queue-network model of a road topology, travel-time distributions of its
//! paths, and bottleneck-hunting optimization of path-split probabilities.
//!
//! The pipeline is: [`model::load_topology`] → [`model::Topology::enumerate_paths`]
//! → [`traveltime::evaluate`] for the min-max exceedance objective →
//! [`optimizer::bh_optimize`]. [`simulator::simulate`] replays a policy as a
//! discrete-event simulation to validate the analytical distributions.

pub mod error;
pub mod model;
pub mod optimizer;
pub mod policy;
pub mod simulator;
pub mod traveltime;

pub use error::{Error, Result};
pub use model::{load_topology, read_topology, ServiceModel, Splits, Topology};
pub use traveltime::{SolverConfig, TravelTimeDistribution};
