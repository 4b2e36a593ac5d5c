//! Solvers for the ambulance-dispatch average-cost Markov decision process.
//!
//! * [`instance`]: problem data, random generation, file formats and the
//!   closest-available-unit policy.
//! * [`exact_mdp`]: exact policy iteration on the full augmented model.
//! * [`post_decision`]: the equivalent `2^N`-state post-decision model.
//! * [`td_learner`]: TD(0) learning of post-decision values inside
//!   approximate policy iteration.
//! * [`evaluation`]: exact (hypercube) and simulated policy evaluation.

pub mod error;
pub mod evaluation;
pub mod exact_mdp;
pub mod instance;
pub mod post_decision;
pub mod td_learner;
pub mod trace;

mod linalg;

pub use error::{Error, Result};
pub use instance::{BusyMask, Instance, Policy};
