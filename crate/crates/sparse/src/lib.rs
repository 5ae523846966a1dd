//! Key-free compressive sensing: seeded Gaussian sensing matrices and the
//! sparse recovery solvers run by the untrusted cloud.
//!
//! Nothing in this crate touches key material, sparsifying bases or
//! plaintext, which lets the storage service depend on it alone.

pub mod recovery;
pub mod sensing;

pub use recovery::{
    l0_oracle, solve_bp, solve_omp, DecompressedBlock, Diagnostics, L0Solution, PreparedRecovery,
    Recovery, RecoveryError, Solution, SolverOptions, SolverRegistry, DEFAULT_SOLVER,
};
pub use sensing::{gen_sensing_matrix, SensingError, SensingMatrix};
