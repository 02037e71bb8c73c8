//! Simulation and control stack for a tendon-driven continuum manipulator
//! mounted under a quadrotor.
//!
//! The crate is organized bottom-up: [`liegroup`] primitives, the [`rod`]
//! material model, coupled [`kinematics`], Lagrangian [`dynamics`], synthetic
//! [`vision`], the high-level [`servoing`] loop, the adaptive [`control`]
//! layer, and the [`scenario`] runner that ties them together.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod kinematics;
pub mod liegroup;
pub mod rod;
pub mod scenario;
pub mod servoing;
pub mod vision;

pub use error::{Error, Result};
