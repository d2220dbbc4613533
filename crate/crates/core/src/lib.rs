//! Waveform design for Gaussian binary detection.
//!
//! The crate maximizes the Kullback–Leibler divergence between the
//! zero-mean complex-Gaussian observation models
//!
//! ```text
//! H0: Y ~ CN(0, K0),  K0 = X R0 X^H + R_N
//! H1: Y ~ CN(0, K1),  K1 = X R_H1 X^H + R_N
//! ```
//!
//! over a transmit waveform `X` (`T × N_t`) with `Tr(X X^H) ≤ P_t`.
//!
//! Three single-user solvers are provided: [`solvers::fp_kld`] (exact
//! quadratic-surrogate updates through a Sylvester equation),
//! [`solvers::mm_kld`] (closed-form updates after an isotropic spectral
//! relaxation) and [`accel::a_mm_kld`] (the latter with Steffensen-type
//! extrapolation). [`isac`] adds a mutual-information term for a
//! communication receiver, [`random_access`] handles several devices with
//! random activity, and [`detection`] runs Monte Carlo likelihood-ratio
//! tests on designed waveforms.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accel;
pub mod detection;
pub mod error;
pub mod io;
pub mod isac;
pub mod linalg;
pub mod objective;
pub mod random_access;
pub mod rng;
pub mod scenario;
pub mod solvers;
pub mod validation;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, HermitianMatrix};
pub use rng::SeededRng;
pub use scenario::{KldProblem, SensingScenario, Waveform};
pub use solvers::{SolverOptions, SolverTrace, Status};
