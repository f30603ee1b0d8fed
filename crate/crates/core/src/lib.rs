//! Numerical laboratory for commuting-projector Hamiltonians on the 2D torus.
//!
//! Modules follow the workflow: Pauli and stabilizer algebra, lattice models,
//! TQO checks, spectra, the flow-equation block diagonalization, and locality
//! tools (Lieb-Robinson growth, quasi-adiabatic continuation).

pub mod decomposition;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod lattice;
pub mod locality;
pub mod pauli;
pub mod spectral;
pub mod perturbation;
pub mod tqo;

pub use error::{Error, Result};
pub use pauli::{minimum_distance, PauliOperator, StabilizerGroup};
