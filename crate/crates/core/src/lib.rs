//! Numerical laboratory for two-scale Hamiltonian systems.
//!
//! The crate covers, bottom-up:
//!
//! * [`model`]: microscopic Hamiltonians with periodic potentials, macroscopic
//!   confinement/interaction potentials, discrete Legendre transforms and the
//!   rescaled N-particle Hamiltonian.
//! * [`cell`]: the effective Hamiltonian of the cell problem (explicit 1D
//!   formula and a minimax bracket over trigonometric correctors), the
//!   effective Lagrangian table and Moreau–Yosida regularisation.
//! * [`transport`]: Wasserstein distances between equal-weight empirical
//!   measures, optimal matchings, geodesics, barycentric projection.
//! * [`dynamics`]: symplectic integration of the rescaled particle flow,
//!   path actions and minimal actions.
//! * [`value`]: discounted resolvents at particle and continuum level, the
//!   resolvent-iteration semigroup and the N→∞ convergence harness.
//! * [`operators`]: the Hamiltonian operators evaluated on simple test
//!   functions over empirical measures.
//! * [`hydro`]: binned hydrodynamic fields and weak-form Euler residuals.
//!
//! Batch work (table entries, multistarts, schedule entries, bins) goes
//! through [`par`], which uses rayon when the `parallel` feature is enabled
//! and falls back to plain iteration otherwise.

pub mod cell;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod hydro;
pub mod model;
pub mod operators;
pub mod optim;
pub mod par;
pub mod quad;
pub mod sum;
pub mod transport;
pub mod value;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
