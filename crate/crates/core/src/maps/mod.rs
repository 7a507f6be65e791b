//! Rational maps of the sphere, map sequences and their degeneracy diagnostics.

mod admissibility;
mod form;
mod lyapunov;
mod map;
mod resultant;
mod sequence;

pub use admissibility::{check_admissibility, AdmissibilityReport, TrendVerdict, FIT_TOL};
pub use form::{BinaryForm, MAX_DEGREE};
pub(crate) use form::{abs_eval_form, eval_form};
pub use lyapunov::{topological_lyapunov, LyapunovEstimate};
pub use map::{HomogeneousMap, COEFF_NORM, DEGENERACY_TOL, IMAGE_TOL};
pub use resultant::resultant;
pub use sequence::{degenerating_map, DistanceProfile, Generator, MapSequence};
