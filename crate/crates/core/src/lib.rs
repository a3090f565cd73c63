//! Identifiability laboratory for time-varying Gaussian-splat appearance.
//!
//! Appearance is a 4D expansion over temporal bases and real spherical
//! harmonics. The crate renders toy splat scenes, builds appearance
//! Jacobians, analyses the resulting Fisher information, and fits the
//! coefficients with joint, hierarchical (projected) and TV-regularized
//! schedules.

pub mod basis;
pub mod cli;
pub mod error;
pub mod fitlab;
pub mod infogeo;
pub mod io;
pub mod jacobians;
pub mod linalg;
pub mod opg;
pub mod regtv;
pub mod render;
pub mod scene;
pub mod seeds;

pub use error::{LabError, Result};
