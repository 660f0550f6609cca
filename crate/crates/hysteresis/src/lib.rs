//! Cost-optimal hysteresis policies for a multi-server queue with a finite
//! buffer, computed either by local search over threshold policies of the
//! hysteresis Markov chain or by solving the uniformized decision process.

pub mod core;
pub mod cloudcost;
pub mod ctmc;
pub mod error;
pub mod heuristics;
pub mod linalg;
pub mod mdp;
pub mod sca;
pub mod sim;

pub use crate::core::{
    classify_policy, validate_threshold_policy, CostModel, CostRates, HysteresisThresholds, MdpPolicy,
    PolicyClass, SolveReport, State, SystemParams, ThresholdPolicy,
};
pub use crate::error::{Error, Result};
