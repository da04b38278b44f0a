//! Lifted calculus on R⁶ = {(v, w)}.
//!
//! Densities are Gaussian mixtures, so every derivative is closed form and
//! pointwise identities hold to rounding. Integral identities are checked
//! with seeded Monte-Carlo estimates.

pub mod frames;
pub mod mixture;
pub mod monte_carlo;
pub mod operators;
pub mod suites;

pub use frames::{commutator, flow, frame_identities, sqrt_alpha_b0_decomposition, vf_eval, FlowOutcome, FrameField, FrameIdentityReport, VectorField, WeightField};
pub use mixture::{Gaussian6, Jet, Mixture6};
pub use monte_carlo::{
    check_integrable, estimate_many, fisher_functional, pair_first_variation, sub_seed, Direction, McEstimate, PairingForm, Sampling,
};
pub use operators::{apply_ql, apply_qks, operator_with_gradient, Operator, QksForm};
pub use suites::{
    commutator_suite, dissipation_check, fisher_derivative_suite, flows_suite, frames_suite, marginal_check, maxwell_suite,
    reference_gaussian, reference_mixture, tensor_fisher_identity, verify, write_csv, IdentityRow, LiftedOptions, QuadratureSpec,
    Suite, SuiteReport, Verdict,
};
