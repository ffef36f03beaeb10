//! Structure-preserving finite-difference solvers for the semilinear
//! Klein-Gordon equation on a de Sitter background,
//!
//! ```text
//! -phi_tt - n H phi_t + e^{-2Ht} lap(phi) - m^2 phi = |phi|^{p-1} phi,
//! ```
//!
//! on periodic uniform grids. Two energy-conserving discretizations are
//! provided ([`SchemeForm::FormI`] with a stride-2 second difference and
//! [`SchemeForm::FormII`] with the compact one), together with Hamiltonian
//! diagnostics, parity (checkerboard) metrics and an experiment harness.
//!
//! All numerics are generic over [`Real`] (`f32`/`f64`); the `*64` aliases
//! below fix the scalar to `f64`, which is what the harness and CLI use.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod schemes;

pub use error::{Error, Result};
pub use harness::{ExperimentSpec, Resolution};
pub use io::RunConfig;
pub use lattice::{Lattice, ScalarField};
pub use model::{PhysParams, SchemeForm, TimeGrid};
pub use scalar::Real;
pub use schemes::{FieldState, SolverConfig, StepReport};

pub type Lattice64 = Lattice<f64>;
pub type Field64 = ScalarField<f64>;
pub type State64 = FieldState<f64>;
pub type Params64 = PhysParams<f64>;
pub type TimeGrid64 = TimeGrid<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type Spec64 = ExperimentSpec<f64>;
pub type Lattice32 = Lattice<f32>;
pub type Field32 = ScalarField<f32>;
