//! Continuous-spin random field model with a symmetric double-well site
//! potential, nearest-neighbour Gaussian coupling and a bounded random field.
//!
//! The crate is organised bottom-up:
//!
//! - [`lattice`]: boxes of Z^d, site sets, boundaries, components, hulls.
//! - [`gaussian`]: the quadratic Hamiltonian, its minimizers, energy splits
//!   and determinant identities.
//! - [`walk`]: random-walk expansion of Dirichlet resolvents grouped by the
//!   range of the walk.
//! - [`potential`]: the quartic well, the coarse-graining kernel and the
//!   parameter certificate.
//! - [`anharmonic`]: the product expansion, the anharmonic weights and the
//!   exact reassembly of the marginal weights.
//! - [`contour`]: contours of Ising configurations and their activities.
//! - [`image`]: the induced Ising weights, pair couplings and many-body
//!   potentials.
//! - [`simulation`]: disorder sampling, Markov chains, coarse graining.
//! - [`checks`]: the verification suite shared by the runner and the tests.
//! - [`runner`]: JSON run configurations, tables and result records.

pub mod anharmonic;
pub mod checks;
pub mod contour;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod lattice;
pub mod potential;
pub mod quad;
pub mod runner;
pub mod simulation;
pub mod walk;

pub use error::{Error, Result};
pub use gaussian::{BoundaryField, DisorderField, GaussianModel, IsingConfig, ModelParams, SpinField};
pub use lattice::{LatticeVolume, Site, SiteSet};
pub use potential::{ParameterCertificate, SiteModel};
