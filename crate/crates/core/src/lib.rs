//! Reconstruction of one-dimensional quantum-mechanical potentials from
//! finite sets of position measurements.
//!
//! The reconstruction is a maximum-posterior estimate: a thermal position
//! likelihood (canonical ensemble of a single particle, its classical limit,
//! or a zero-temperature Hartree-Fock pair model) is combined with Gaussian
//! process priors over the potential, and the stationarity equation is solved
//! by preconditioned fixed-point iteration with backtracking step control.
//!
//! Module map:
//! - [`lattice`]: uniform 1D grids, fields on them, and the discrete operators
//!   (Laplacians, truncated RBF inverse covariances) all other modules share.
//! - [`spectral`]: Hamiltonian assembly, dense eigendecomposition, thermal
//!   ensembles and the position likelihood.
//! - [`gradients`]: functional derivatives of energies, orbitals, likelihoods
//!   and thermal averages with respect to the potential.
//! - [`priors`]: Gaussian, mixture-of-Gaussian, approximate-symmetry and
//!   average-energy prior terms.
//! - [`optimizer`]: the preconditioned maximum-posterior iteration.
//! - [`classical`]: the mass-independent classical-limit likelihood and its
//!   reconstruction loop.
//! - [`hartree_fock`]: self-consistent mean field for N spinless fermions,
//!   Slater-determinant likelihoods, orbital response equations, the inverse
//!   mean-field reconstruction, and an exact two-body oracle.
//! - [`data`]: datasets, seeded sampling, empirical densities.
//! - [`gradcheck`]: finite-difference verification suites for every analytic
//!   gradient in the crate.

pub mod classical;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradients;
pub mod hartree_fock;
pub mod lattice;
pub mod optimizer;
pub mod priors;
pub mod spectral;

pub use error::{Error, Result};
pub use lattice::{Boundary, Lattice, LatticeField, LatticeOperator};
