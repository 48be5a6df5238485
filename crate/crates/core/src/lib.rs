//! LSTD actor-critic for stochastic shortest path MDPs.
//!
//! The crate covers the full pipeline of the grid-world reachability case:
//!
//! * [`mdp`]: tabular MDPs, validation and seeded sampling;
//! * [`mrp`]: reachability problems and their SSP reformulation;
//! * [`rsp`]: Boltzmann policies over per-action features and their score;
//! * [`learner`]: the LSTD critic, the clipped actor and the training loop;
//! * [`grid`]: the grid environment and its safety/progress features;
//! * [`oracles`]: exact solvers used to verify everything above.

pub mod error;
pub mod grid;
pub mod learner;
pub mod linalg;
pub mod mdp;
pub mod mrp;
pub mod oracles;
pub mod rsp;

pub use error::{Error, Result};
pub use mdp::{FiniteMdp, Rsp};
pub use mrp::{MrpProblem, SspProblem};
pub use rsp::{BoltzmannPolicy, FeatureProvider, FeatureTable, PolicyParams};
