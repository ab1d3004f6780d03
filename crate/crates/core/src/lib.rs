//! Finite-mode spectral laboratory for the translation-invariant Pauli–Fierz
//! fiber Hamiltonian H(ξ) at fixed total momentum ξ.
//!
//! - [`fock`]: truncated Fock space and ladder/diagonal operators
//! - [`field`]: mode discretization, A, B, H_f, P_f and H(ξ)
//! - [`spectral`]: ground states, dispersion E(ξ), gradients, shifted solves
//! - [`diagnostics`]: numerical identity checks and infrared sweeps

pub mod diagnostics;
pub mod error;
pub mod field;
pub mod fock;
pub mod format;
pub mod linalg;
pub mod quadrature;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{CouplingParams, FiberHamiltonian, FiberModel, FieldDiscretization, FieldOperators, ModeSet};
pub use fock::{FockBasis, FockBasisOptions, OccupationState};
pub use quadrature::{AngularScheme, RadialScheme, Vec3};
pub use sparse::{SparseOperator, C64};
