//! Simulation of constrained sports group draws.
//!
//! The library models a tournament as pots of teams that are drawn into
//! groups subject to geographic restrictions, implements the Uniform
//! (rejection sampling) and Skip (sequential with look-ahead) draw
//! procedures, and measures how far a procedure departs from equal
//! treatment through Herfindahl–Hirschman concentration of the pairwise
//! co-group probabilities.

pub mod error;
pub mod experiment;
pub mod feasibility;
pub mod mechanisms;
pub mod metrics;
pub mod model;
pub mod oracle;

pub use error::{DrawError, Result};
