use nalgebra::DVector;

use super::lstsq::{lstsq_columns, scatter};
use super::{
    check_len, log_diagnostics, PreparedRecovery, Recovery, RecoveryError, Solution, SolverOptions,
};
use crate::sensing::SensingMatrix;

/// Residuals below `RESIDUAL_TOL * ||y||` end the greedy loop early.
const RESIDUAL_TOL: f64 = 1e-12;

/// Orthogonal matching pursuit. Requires `opts.sparsity`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OrthogonalMatchingPursuit;

impl Recovery for OrthogonalMatchingPursuit {
    fn name(&self) -> &'static str {
        "omp"
    }

    fn prepare(&self, phi: &SensingMatrix) -> Result<Box<dyn PreparedRecovery>, RecoveryError> {
        Ok(Box::new(PreparedOmp::new(phi)))
    }
}

struct PreparedOmp {
    phi: SensingMatrix,
    col_norms: Vec<f64>,
}

impl PreparedOmp {
    fn new(phi: &SensingMatrix) -> Self {
        let col_norms = phi.matrix().column_iter().map(|c| c.norm()).collect();
        Self {
            phi: phi.clone(),
            col_norms,
        }
    }

    fn run(&self, y: &[f64], k: usize) -> Result<Solution, RecoveryError> {
        let (m, n) = (self.phi.m(), self.phi.n());
        check_len(m, y.len())?;
        if k == 0 || k > m {
            return Err(RecoveryError::InvalidOptions(format!(
                "omp sparsity must be in 1..={m}, got {k}"
            )));
        }
        let a = self.phi.matrix();
        let y_vec = DVector::from_column_slice(y);
        let stop = RESIDUAL_TOL * y_vec.norm();

        let mut support: Vec<usize> = Vec::with_capacity(k);
        let mut coeffs = DVector::zeros(0);
        let mut residual = y_vec.clone();
        let mut iterations = 0;
        while support.len() < k && residual.norm() > stop {
            let corr = a.tr_mul(&residual);
            let best = (0..n)
                .filter(|j| !support.contains(j) && self.col_norms[*j] > 0.0)
                .map(|j| (j, corr[j].abs() / self.col_norms[j]))
                .fold(None::<(usize, f64)>, |acc, cand| match acc {
                    Some(b) if b.1 >= cand.1 => Some(b),
                    _ => Some(cand),
                });
            let Some((j, _)) = best else { break };
            support.push(j);
            iterations += 1;
            coeffs = lstsq_columns(a, &support, &y_vec).ok_or(RecoveryError::RankDeficient)?;
            residual = &y_vec - a.select_columns(&support) * &coeffs;
        }

        let z = scatter(n, &support, &coeffs);
        Ok(Solution::new(&self.phi, y, z, iterations, true))
    }
}

impl PreparedRecovery for PreparedOmp {
    fn solve(&self, y: &[f64], opts: &SolverOptions) -> Result<Solution, RecoveryError> {
        let k = opts
            .sparsity
            .ok_or_else(|| RecoveryError::InvalidOptions("omp needs a sparsity budget".into()))?;
        let sol = self.run(y, k)?;
        log_diagnostics("omp", &sol.diagnostics);
        Ok(sol)
    }
}

/// Greedy `k`-step recovery.
pub fn solve_omp(phi: &SensingMatrix, y: &[f64], k: usize) -> Result<Solution, RecoveryError> {
    PreparedOmp::new(phi).run(y, k)
}
