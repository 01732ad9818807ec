//! Magnetically actuated capsule endoscopy: simulator, diffusion action
//! policy, demonstration pipeline and evaluation harness.

pub mod action;
pub mod arm;
pub mod dataset;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod harness;
pub mod magnetics;
pub mod nn;
pub mod observation;
pub mod sim;

pub use action::{Action, ActionBounds, ACTION_DIM};
pub use arm::{ArmConfig, ArmState, Pose};
pub use error::{Error, Result};
pub use magnetics::{Dipole, PhysicalConstants, Wrench};
pub use env::{EnvConfig, Environment};
pub use observation::{Observation, PROPRIO_DIM};
