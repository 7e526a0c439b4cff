//! Constrained adversarial reinforcement learning for robust driving.
//!
//! A soft actor-critic adversary picks a target acceleration for the driving
//! agent, and an iterative signed-gradient attack perturbs the agent's
//! observation (within an ℓ∞ budget) to steer it there. The agent trains
//! against this adversary with twin critics and two Lagrangian constraints:
//! a collision-risk bound scored by the adversary's critics, and a
//! policy-consistency bound between clean and perturbed actions.
//!
//! Modules:
//! - [`sim`]: kinematic unprotected-left-turn environment
//! - [`nn`]: flat-parameter MLPs with parameter and input gradients, the
//!   squashed Gaussian head, Adam, and the checkpoint format
//! - [`adversary`]: SAC adversary and the replay buffer
//! - [`attack`]: PG loss, BIM, gradient/orthogonal probe, sphere noise
//! - [`agent`]: constrained twin-critic driving agent and dual updates
//! - [`harness`]: configuration, co-training, evaluation, probe studies

pub mod adversary;
pub mod agent;
pub mod attack;
pub mod error;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
