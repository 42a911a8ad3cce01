//! Truncated-Fock-space simulation of a one-dimensional harmonic oscillator
//! under simultaneous continuous measurement of both quadratures with
//! Markovian feedback control.
//!
//! The crate is organized around five layers:
//!
//! - [`operators`]: the fixed operator algebra (ladder operators, quadratures,
//!   Hamiltonian, Lindblad dissipator) on a truncated Fock space.
//! - [`states`]: density matrices (thermal, Fock, coherent), observables,
//!   purity and squeezing reports, and the truncation guard.
//! - [`master_eq`]: the deterministic feedback master equation, RK4 time
//!   integration, and direct steady-state solving via the vectorized
//!   generator.
//! - [`sme`]: conditioned stochastic trajectories of the Ito stochastic
//!   master equation with record-driven feedback, and ensemble averaging.
//! - [`moments`]: closed-form and small-ODE engines for the first and second
//!   quadrature moments, used as fast cross-checks of the full solvers.
//!
//! All engines work in units with hbar = 1; frequencies and measurement or
//! feedback strengths share the same inverse-time unit.

pub mod error;
pub mod master_eq;
pub mod moments;
pub mod operators;
pub mod sme;
pub mod states;

pub use error::SimError;
pub use master_eq::{FeedbackModelParams, Generator, KCoefficients, Variant};
pub use moments::{MomentSolution, MomentState};
pub use operators::{FockDim, OperatorSet};
pub use sme::{EnsembleSeries, MeasurementRecord, NoiseStream, TrajectoryRecord};
pub use states::{DensityMatrix, ObservableReport, TruncationStatus};

/// Complex matrix element type used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix on the truncated Fock space.
pub type CMat = ndarray::Array2<C64>;
