//! Solvers for the time-fractional heat equation
//! D_t^α v + σ(t)·M v = f with a discrete-spectrum operator M.
//!
//! The forward problem (given σ, find v) is solved per eigenmode by Picard
//! iteration on the Volterra integral representation, cross-checked by an
//! independent implicit L1 time-stepping scheme. The inverse problem
//! (recover the time-dependent coefficient σ from a scalar observation
//! F[v(t)] = E(t)) runs a damped, clamped fixed-point iteration of the
//! quotient operator
//!
//! ```text
//! P[σ](t) = (Σ φ_ξ f_ξ(t) - D_t^α E(t)) / (Σ μ_ξ φ_ξ v_ξ(t; σ))
//! ```
//!
//! whose invariant bracket [C0/C3, C1/C2] is computed from the data.
//!
//! Modules:
//! * [`mlf`] — Mittag-Leffler function and kernel evaluation
//! * [`grid`] — time grids and sampled coefficient paths
//! * [`fraccalc`] — L1 Caputo derivative, Riemann-Liouville integral
//! * [`spectra`] — mode sets, observation functionals, Sobolev norms
//! * [`forward`] — per-mode solvers, observation, solution bounds
//! * [`inverse`] — coefficient recovery and stability experiments
//! * [`scenario`] — scenario files, run/describe/verify pipelines

pub mod error;
pub mod fraccalc;
pub mod forward;
pub mod grid;
pub mod inverse;
pub mod mlf;
pub mod scenario;
pub mod spectra;

pub use error::{Error, Result};
pub use grid::{CoefficientPath, TimeGrid};
