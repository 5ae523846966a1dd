use nalgebra::{DVector, LU};

use super::{
    check_len, log_diagnostics, PreparedRecovery, Recovery, RecoveryError, Solution, SolverOptions,
};
use crate::sensing::SensingMatrix;

/// Direct inversion for square operators (full sampling rate).
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectSolve;

impl Recovery for DirectSolve {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn prepare(&self, phi: &SensingMatrix) -> Result<Box<dyn PreparedRecovery>, RecoveryError> {
        if phi.m() != phi.n() {
            return Err(RecoveryError::Unsupported {
                solver: "direct",
                reason: format!("operator is {}x{}, not square", phi.m(), phi.n()),
            });
        }
        let lu = phi.matrix().clone().lu();
        if !lu.is_invertible() {
            return Err(RecoveryError::RankDeficient);
        }
        Ok(Box::new(PreparedDirect {
            phi: phi.clone(),
            lu,
        }))
    }
}

struct PreparedDirect {
    phi: SensingMatrix,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl PreparedRecovery for PreparedDirect {
    fn solve(&self, y: &[f64], _opts: &SolverOptions) -> Result<Solution, RecoveryError> {
        check_len(self.phi.m(), y.len())?;
        let z = self
            .lu
            .solve(&DVector::from_column_slice(y))
            .ok_or(RecoveryError::RankDeficient)?;
        let sol = Solution::new(&self.phi, y, z.as_slice().to_vec(), 1, true);
        log_diagnostics("direct", &sol.diagnostics);
        Ok(sol)
    }
}
