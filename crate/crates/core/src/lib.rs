//! Non-autonomous dynamics of rational maps on the Riemann sphere: Green
//! functions, equilibrium measures, transfer operators and the statistics of
//! Birkhoff sums along a sequence of maps.

pub mod error;
pub mod fit;
pub mod geometry;
pub mod green;
pub mod maps;
pub mod measure;
pub mod observable;
pub mod preimage;
pub mod seeding;
pub mod stochastics;
pub mod transfer;

pub use error::{Error, Result};
pub use geometry::{chordal_dist, ProjectivePoint};
pub use maps::{HomogeneousMap, MapSequence};
