//! Numerical laboratory for two-ring bubble towers of the critical Yamabe
//! equation -Δu = γ|u|^{p-1}u on R^n.
//!
//! The crate builds the approximate solution U_* = U - Σ U_{μ,ξ_j} - Σ U_{λ,η_l}
//! (a central bubble minus two orthogonal rings of bubbles pinned to the unit
//! sphere), evaluates its error field and weighted norms, solves the reduced
//! balancing equations for the ring parameters, generates the full candidate
//! kernel basis of the linearized operator together with its bubble-local
//! decompositions, assembles the circulant interaction blocks, and bundles a
//! desk-scale nondegeneracy/maximality certificate.

pub mod bubble;
pub mod circulant;
pub mod config;
pub mod error;
pub mod error_field;
pub mod field;
pub mod fitting;
pub mod kernel;
pub mod nondegeneracy;
pub mod quadrature;
pub mod reduction;

pub use config::{TowerConfiguration, TowerParams};
pub use error::{Error, Result};
pub use field::{ScalarField, SymmetryTag};
pub use quadrature::{QuadResult, QuadratureScheme, Region, SchemeParams};
