//! Numerical pipeline from a Cucker-Smale type kinetic alignment model to its
//! macroscopic density/orientation system: weighted quadrature, equilibrium
//! moments, the collision-invariant profile chi, the transport coefficients
//! c1 and c2, a finite-volume solver for the limit system and a stochastic
//! particle simulator of the rescaled kinetic equation.

pub mod coefficients;
pub mod equilibrium;
pub mod error;
pub mod gci_chi;
pub mod kinetic;
pub mod linalg;
pub mod quadrature;
pub mod soh;
pub mod velocity_quad;

pub use error::{Error, Result};
