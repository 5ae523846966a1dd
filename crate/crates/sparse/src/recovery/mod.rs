//! Sparse recovery: the cloud-side decompression step and its cross-check
//! oracles.
//!
//! Every algorithm implements [`Recovery`] and is registered by name in a
//! [`SolverRegistry`]. A `Recovery` is first prepared against a sensing
//! matrix, which lets it factor the matrix once and reuse the factorization
//! across every block that shares that matrix.

mod admm;
mod direct;
mod l0;
mod lstsq;
mod omp;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

use crate::sensing::SensingMatrix;

pub use admm::AdmmBasisPursuit;
pub use direct::DirectSolve;
pub use l0::{l0_oracle, L0Oracle, L0Solution, L0_MAX_N, L0_MAX_SPARSITY};
pub use omp::{solve_omp, OrthogonalMatchingPursuit};

/// Name of the default solver.
pub const DEFAULT_SOLVER: &str = "admm-bp";

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Residual tolerance `||Phi z - y||_2 <= epsilon`; 0 means equality.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Initial ADMM penalty; adapted during the run.
    pub rho: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Least-squares refit on the detected support.
    pub debias: bool,
    /// Sparsity budget for greedy and exhaustive solvers.
    pub sparsity: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            max_iters: 4000,
            rho: 1.0,
            abs_tol: 1e-7,
            rel_tol: 1e-5,
            debias: true,
            sparsity: None,
        }
    }
}

impl SolverOptions {
    /// Options for approximately sparse data: `epsilon = 1e-6 ||y||_2`.
    pub fn compressible(y: &[f64]) -> Self {
        Self {
            epsilon: 1e-6 * norm2(y),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RecoveryError> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(RecoveryError::InvalidOptions(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(RecoveryError::InvalidOptions(
                "max_iters must be >= 1".into(),
            ));
        }
        if !self.rho.is_finite() || self.rho <= 0.0 {
            return Err(RecoveryError::InvalidOptions(format!(
                "rho must be finite and > 0, got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Stable within a process; used as a cache key component.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.epsilon.to_bits().hash(&mut h);
        self.max_iters.hash(&mut h);
        self.rho.to_bits().hash(&mut h);
        self.abs_tol.to_bits().hash(&mut h);
        self.rel_tol.to_bits().hash(&mut h);
        self.debias.hash(&mut h);
        self.sparsity.hash(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub iterations: usize,
    /// `||Phi z - y||_2` of the returned vector.
    pub residual: f64,
    pub l1_norm: f64,
    pub converged: bool,
    pub debiased: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub z: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl Solution {
    pub(crate) fn new(
        phi: &SensingMatrix,
        y: &[f64],
        z: Vec<f64>,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let residual = residual_norm(phi, &z, y);
        let l1_norm = z.iter().map(|v| v.abs()).sum();
        Self {
            z,
            diagnostics: Diagnostics {
                iterations,
                residual,
                l1_norm,
                converged,
                debiased: false,
            },
        }
    }

    pub fn support(&self, threshold: f64) -> Vec<usize> {
        support_of(&self.z, threshold)
    }
}

/// Recovered vector for one data block; still masked and permuted.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompressedBlock {
    pub index: u64,
    pub z: Vec<f64>,
}

impl DecompressedBlock {
    pub fn new(index: u64, z: Vec<f64>) -> Self {
        Self { index, z }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("solver did not converge after {} iterations (residual {:.3e})", .0.diagnostics.iterations, .0.diagnostics.residual)]
    NotConverged(Box<Solution>),
    #[error("selected columns are linearly dependent")]
    RankDeficient,
    #[error("problem too large for exhaustive search (n={n}, k_max={k_max})")]
    TooLarge { n: usize, k_max: usize },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("solver `{solver}` cannot handle this operator: {reason}")]
    Unsupported {
        solver: &'static str,
        reason: String,
    },
    #[error("unknown solver `{0}`")]
    UnknownSolver(String),
}

/// A recovery algorithm selectable by name.
pub trait Recovery: Send + Sync {
    fn name(&self) -> &'static str;

    /// Precomputes whatever the algorithm needs from `phi`.
    fn prepare(&self, phi: &SensingMatrix) -> Result<Box<dyn PreparedRecovery>, RecoveryError>;
}

/// A recovery algorithm bound to one sensing matrix.
pub trait PreparedRecovery: Send + Sync {
    fn solve(&self, y: &[f64], opts: &SolverOptions) -> Result<Solution, RecoveryError>;
}

/// Name-indexed set of recovery algorithms.
#[derive(Clone, Default)]
pub struct SolverRegistry {
    entries: BTreeMap<&'static str, Arc<dyn Recovery>>,
}

impl SolverRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding `admm-bp`, `omp`, `l0` and `direct`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register(Arc::new(AdmmBasisPursuit));
        reg.register(Arc::new(OrthogonalMatchingPursuit));
        reg.register(Arc::new(L0Oracle));
        reg.register(Arc::new(DirectSolve));
        reg
    }

    /// Adds or replaces the entry under `solver.name()`.
    pub fn register(&mut self, solver: Arc<dyn Recovery>) {
        self.entries.insert(solver.name(), solver);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Recovery>, RecoveryError> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| RecoveryError::UnknownSolver(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl std::fmt::Debug for SolverRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolverRegistry")
            .field("solvers", &self.names())
            .finish()
    }
}

/// `min ||z||_1` subject to `||Phi z - y||_2 <= opts.epsilon`.
pub fn solve_bp(
    phi: &SensingMatrix,
    y: &[f64],
    opts: &SolverOptions,
) -> Result<Solution, RecoveryError> {
    AdmmBasisPursuit.prepare(phi)?.solve(y, opts)
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<(), RecoveryError> {
    if expected != found {
        return Err(RecoveryError::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn residual_norm(phi: &SensingMatrix, z: &[f64], y: &[f64]) -> f64 {
    let phiz = phi
        .measure(z)
        .expect("solver produced a vector of the wrong length");
    phiz.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn support_of(z: &[f64], threshold: f64) -> Vec<usize> {
    z.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > threshold)
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn log_diagnostics(solver: &str, d: &Diagnostics) {
    log::debug!(
        target: "mpcc::solver",
        "solver={} iterations={} residual={:.6e} l1={:.6e} converged={} debiased={}",
        solver,
        d.iterations,
        d.residual,
        d.l1_norm,
        d.converged,
        d.debiased
    );
}
