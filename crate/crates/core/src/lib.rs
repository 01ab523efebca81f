//! Two hard balls in `[0,1]^k x T^(nu-k)`: exact event-driven dynamics,
//! symbolic collision sequences, tangent dynamics and neutral subspaces,
//! unfolding of walled axes, the orthogonal cylindric billiard picture,
//! and ensemble diagnostics.

pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod model;
pub mod neutral;
pub mod product;
pub mod symbolic;
pub mod tangent;
pub mod unfolding;

pub use error::{Error, ErrorClass, Result};
pub use geometry::{AxisKind, AxisSet, Container, Vector};
pub use model::{sample_liouville, validate, ModelParams, PhasePoint, ToleranceSet, Violation};
