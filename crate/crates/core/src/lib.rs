//! Numerical weak KAM toolkit for N-body problems with homogeneous potentials
//! `U(x) = sum_{i<j} m_i m_j r_ij^{-2 kappa}`, `0 < kappa < 1`.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: problem description, configurations, norms and the
//!   cluster-partition construction.
//! - [`dynamics`]: potential, Hamiltonian, central configurations and
//!   parabolic homothetic motions.
//! - [`paths`]: discrete paths, action quadrature, the reparametrisation
//!   map and the explicit bounded-action connectors with their certificates.
//! - [`action_potential`]: direct trajectory optimisation of the fixed-time
//!   and free-time action potential, plus property certification.
//! - [`weak_kam`]: grid Lax-Oleinik operator on reduced problems,
//!   fixed-point iteration, domination/eikonal/calibration checks and the
//!   closed-form Kepler oracles.
//!
//! [`quadrature`] and [`optim`] hold the numerical plumbing shared by the
//! modules above.

pub mod action_potential;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod optim;
pub mod paths;
pub mod quadrature;
pub mod system;
pub mod weak_kam;

pub use error::{Error, Result};
pub use geometry::{Configuration, ProblemSpec};
pub use system::Lagrangian;
