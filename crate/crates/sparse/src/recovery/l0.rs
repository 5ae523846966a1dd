//! Exhaustive minimum-support search, used as ground truth in tests.

use nalgebra::DVector;

use super::lstsq::{lstsq_columns, scatter};
use super::{
    check_len, log_diagnostics, residual_norm, PreparedRecovery, Recovery, RecoveryError, Solution,
    SolverOptions,
};
use crate::sensing::SensingMatrix;

pub const L0_MAX_N: usize = 16;
pub const L0_MAX_SPARSITY: usize = 3;
/// Feasibility tolerance relative to `max(1, ||y||)`.
const FEASIBLE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct L0Solution {
    pub z: Vec<f64>,
    pub support: Vec<usize>,
    pub residual: f64,
    /// False when no support of size `<= k_max` reproduces `y`; `z` is then
    /// the best-residual candidate.
    pub feasible: bool,
}

/// Searches every support of size `0..=k_max` in lexicographic order and
/// returns the smallest feasible one. Ties on size go to the smallest l2
/// norm, then to the lexicographically first support.
pub fn l0_oracle(
    phi: &SensingMatrix,
    y: &[f64],
    k_max: usize,
) -> Result<L0Solution, RecoveryError> {
    l0_search(phi, y, k_max, 0.0)
}

fn l0_search(
    phi: &SensingMatrix,
    y: &[f64],
    k_max: usize,
    epsilon: f64,
) -> Result<L0Solution, RecoveryError> {
    let (m, n) = (phi.m(), phi.n());
    check_len(m, y.len())?;
    if n > L0_MAX_N || k_max > L0_MAX_SPARSITY {
        return Err(RecoveryError::TooLarge { n, k_max });
    }
    let y_vec = DVector::from_column_slice(y);
    let tol = epsilon.max(FEASIBLE_REL_TOL * y_vec.norm().max(1.0));

    let mut best_infeasible: Option<L0Solution> = None;
    for size in 0..=k_max.min(m) {
        let mut best_here: Option<(f64, L0Solution)> = None;
        for support in combinations(n, size) {
            let Some(w) = lstsq_columns(phi.matrix(), &support, &y_vec) else {
                continue;
            };
            let z = scatter(n, &support, &w);
            let residual = residual_norm(phi, &z, y);
            let cand = L0Solution {
                z,
                support,
                residual,
                feasible: residual <= tol,
            };
            if cand.feasible {
                let l2 = w.norm();
                if best_here.as_ref().is_none_or(|(b, _)| l2 < *b) {
                    best_here = Some((l2, cand));
                }
            } else if best_infeasible
                .as_ref()
                .is_none_or(|b| residual < b.residual)
            {
                best_infeasible = Some(cand);
            }
        }
        if let Some((_, sol)) = best_here {
            return Ok(sol);
        }
    }
    Ok(best_infeasible.expect("the empty support is always a candidate"))
}

/// All `size`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut current: Option<Vec<usize>> = if size <= n {
        Some((0..size).collect())
    } else {
        None
    };
    std::iter::from_fn(move || {
        let out = current.clone()?;
        let next = {
            let mut c = out.clone();
            let mut i = size;
            loop {
                if i == 0 {
                    break None;
                }
                i -= 1;
                if c[i] < n - size + i {
                    c[i] += 1;
                    for j in i + 1..size {
                        c[j] = c[j - 1] + 1;
                    }
                    break Some(c);
                }
            }
        };
        current = next;
        Some(out)
    })
}

/// Registry adapter. `opts.sparsity` defaults to [`L0_MAX_SPARSITY`];
/// infeasible instances surface as `NotConverged`.
#[derive(Debug, Clone, Copy, Default)]
pub struct L0Oracle;

impl Recovery for L0Oracle {
    fn name(&self) -> &'static str {
        "l0"
    }

    fn prepare(&self, phi: &SensingMatrix) -> Result<Box<dyn PreparedRecovery>, RecoveryError> {
        if phi.n() > L0_MAX_N {
            return Err(RecoveryError::TooLarge {
                n: phi.n(),
                k_max: L0_MAX_SPARSITY,
            });
        }
        Ok(Box::new(PreparedL0 { phi: phi.clone() }))
    }
}

struct PreparedL0 {
    phi: SensingMatrix,
}

impl PreparedRecovery for PreparedL0 {
    fn solve(&self, y: &[f64], opts: &SolverOptions) -> Result<Solution, RecoveryError> {
        let k_max = opts.sparsity.unwrap_or(L0_MAX_SPARSITY);
        let found = l0_search(&self.phi, y, k_max, opts.epsilon)?;
        let sol = Solution::new(&self.phi, y, found.z, found.support.len(), found.feasible);
        log_diagnostics("l0", &sol.diagnostics);
        if found.feasible {
            Ok(sol)
        } else {
            Err(RecoveryError::NotConverged(Box::new(sol)))
        }
    }
}
