//! Finite-element spectral laboratory for eigenvalue comparisons between the
//! curl-curl (Maxwell cavity) operator, the Dirichlet/Neumann Laplacians, and
//! the combined div-curl form on 3D polyhedral domains.
//!
//! The crate computes discrete spectra with Nédélec edge elements and Lagrange
//! elements on tetrahedral meshes, provides closed-form box spectra with exact
//! multiplicity bookkeeping, and verifies the interlacing inequality
//! `alpha_{2k+1} <= lambda_k` together with the union decomposition of the
//! div-curl spectrum that underlies it.

pub mod assembly;
pub mod eigensolve;
pub mod elements;
pub mod error;
pub mod mesh;
pub mod oracle;
pub mod report;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
pub use mesh::{build_box_mesh, read_gmsh, BoxSpec, TetMesh};
