//! Lower-order functional observers with linear error dynamics for
//! autonomous discrete-time systems.
//!
//! An observer `ξ(k+1) = A ξ + B y`, `ẑ = C ξ + D y` estimating a scalar
//! functional `z = q(x)` exists for a prescribed spectrum exactly when an
//! α-weighted combination of `q∘F^i` lies in the span of the `H_j∘F^i`. The
//! crate checks that condition, builds the observer and its invariant
//! manifold `ξ = T(x)`, and simulates the resulting error dynamics.

pub mod cstr;
pub mod error;
pub mod expr;
pub mod io;
pub mod linalg;
pub mod linear_design;
pub mod model;
pub mod nonlinear_design;
pub mod runtime;
pub mod spectrum;

pub use error::{Error, Result};
pub use linear_design::{
    BetaCoefficients, DesignOptions, LinearTransformation, ObserverRealization,
};
pub use model::{DomainBox, LinearSystem, NonlinearSystem, SystemModel};
pub use nonlinear_design::{SampleSet, Transformation};
pub use spectrum::CharPoly;
