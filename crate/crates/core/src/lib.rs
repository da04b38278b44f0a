//! Numerical laboratory for the isotropic Landau equation in its
//! Krieger-Strain form, `∂_t f = a[f]Δf − (2+γ) h[f] f`.
//!
//! The crate simulates radial (and small Cartesian) solutions, monitors the
//! conserved and dissipated quantities along the flow, and checks the
//! lifted-operator calculus on R⁶ that underlies Fisher-information decay.

pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod harness;
pub mod kernels;
pub mod lifted;
pub mod solver;

pub use error::{Error, Result};
