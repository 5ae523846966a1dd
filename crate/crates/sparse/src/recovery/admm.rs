//! Basis pursuit by ADMM.
//!
//! The constraint set `{z : ||Phi z - y|| <= eps}` is handled through the
//! row-whitened operator `W = L^-1 Phi`, where `L L^T = Phi Phi^T`. `W` has
//! orthonormal rows, so projecting onto `{z : ||W z - L^-1 y|| <= eps'}` has
//! a closed form. For `eps = 0` both sets coincide. For `eps > 0` we take
//! `eps' = eps / ||L||_2`, which keeps every projected iterate inside the
//! original residual ball.
//!
//! Iteration (over-relaxed, scaled dual `u`):
//!
//! ```text
//! x   = proj(z - u)
//! xh  = alpha x + (1 - alpha) z
//! z   = soft(xh + u, 1 / rho)
//! u  += xh - z
//! ```
//!
//! Every 10 iterations during the first 1000, `rho` is doubled or halved
//! when the primal and dual residuals are more than a factor of 10 apart.

use nalgebra::{DMatrix, DVector};

use super::lstsq::{lstsq_columns, scatter};
use super::{
    check_len, log_diagnostics, norm2, support_of, PreparedRecovery, Recovery, RecoveryError,
    Solution, SolverOptions,
};
use crate::sensing::SensingMatrix;

const RELAXATION: f64 = 1.6;
const BALANCE_RATIO: f64 = 10.0;
const BALANCE_STEP: f64 = 2.0;
const BALANCE_EVERY: usize = 10;
const BALANCE_UNTIL: usize = 1000;
/// Support detection for the debiasing pass: `|z_i| > 1e-4 ||z||_inf`.
pub(crate) const SUPPORT_REL_THRESHOLD: f64 = 1e-4;
/// Slack on feasibility when accepting a candidate solution.
const FEASIBILITY_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default)]
pub struct AdmmBasisPursuit;

impl Recovery for AdmmBasisPursuit {
    fn name(&self) -> &'static str {
        "admm-bp"
    }

    fn prepare(&self, phi: &SensingMatrix) -> Result<Box<dyn PreparedRecovery>, RecoveryError> {
        Ok(Box::new(PreparedAdmm::new(phi)?))
    }
}

struct PreparedAdmm {
    phi: SensingMatrix,
    chol_l: DMatrix<f64>,
    whitened: DMatrix<f64>,
    /// Upper estimate of the spectral norm of `L`.
    l_norm: f64,
}

impl PreparedAdmm {
    fn new(phi: &SensingMatrix) -> Result<Self, RecoveryError> {
        let a = phi.matrix();
        let gram = a * a.transpose();
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| RecoveryError::Unsupported {
                solver: "admm-bp",
                reason: "sensing matrix rows are linearly dependent".into(),
            })?;
        let chol_l = chol.l();
        let whitened = chol_l
            .solve_lower_triangular(a)
            .expect("Cholesky factor has a nonzero diagonal");
        let l_norm = 1.01 * largest_eigenvalue(&gram).sqrt();
        Ok(Self {
            phi: phi.clone(),
            chol_l,
            whitened,
            l_norm,
        })
    }

    fn project(
        &self,
        v: &DVector<f64>,
        target: &DVector<f64>,
        radius: f64,
        out: &mut DVector<f64>,
        r: &mut DVector<f64>,
    ) {
        r.gemv(1.0, &self.whitened, v, 0.0);
        *r -= target;
        let scale = if radius == 0.0 {
            1.0
        } else {
            let nr = r.norm();
            if nr <= radius {
                0.0
            } else {
                1.0 - radius / nr
            }
        };
        out.copy_from(v);
        if scale != 0.0 {
            out.gemv_tr(-scale, &self.whitened, r, 1.0);
        }
    }
}

impl PreparedRecovery for PreparedAdmm {
    fn solve(&self, y: &[f64], opts: &SolverOptions) -> Result<Solution, RecoveryError> {
        opts.validate()?;
        let (m, n) = (self.phi.m(), self.phi.n());
        check_len(m, y.len())?;

        let y_norm = norm2(y);
        if y_norm <= opts.epsilon {
            let sol = Solution::new(&self.phi, y, vec![0.0; n], 0, true);
            log_diagnostics("admm-bp", &sol.diagnostics);
            return Ok(sol);
        }

        // Work on a normalized copy so that rho and abs_tol are scale free.
        let y_vec = DVector::from_column_slice(y);
        let whitened_y = self
            .chol_l
            .solve_lower_triangular(&y_vec)
            .expect("Cholesky factor has a nonzero diagonal");
        let scale = whitened_y.norm() / (m as f64).sqrt();
        let target = &whitened_y / scale;
        let radius = opts.epsilon / self.l_norm / scale;

        let mut x = DVector::<f64>::zeros(n);
        let mut z = DVector::<f64>::zeros(n);
        let mut u = DVector::<f64>::zeros(n);
        let mut v = DVector::<f64>::zeros(n);
        let mut z_old = DVector::<f64>::zeros(n);
        let mut r = DVector::<f64>::zeros(m);
        let mut rho = opts.rho;
        let sqrt_n = (n as f64).sqrt();
        let mut converged = false;
        let mut iterations = 0;

        for it in 1..=opts.max_iters {
            iterations = it;
            v.copy_from(&z);
            v -= &u;
            self.project(&v, &target, radius, &mut x, &mut r);

            z_old.copy_from(&z);
            let thresh = 1.0 / rho;
            for i in 0..n {
                let xh = RELAXATION * x[i] + (1.0 - RELAXATION) * z_old[i];
                let w = xh + u[i];
                let zi = soft(w, thresh);
                z[i] = zi;
                u[i] = w - zi;
            }

            let mut primal = 0.0;
            let mut dual = 0.0;
            for i in 0..n {
                primal += (x[i] - z[i]).powi(2);
                dual += (z[i] - z_old[i]).powi(2);
            }
            let primal = primal.sqrt();
            let dual = rho * dual.sqrt();
            let eps_pri = sqrt_n * opts.abs_tol + opts.rel_tol * x.norm().max(z.norm());
            let eps_dual = sqrt_n * opts.abs_tol + opts.rel_tol * rho * u.norm();
            if primal < eps_pri && dual < eps_dual {
                converged = true;
                break;
            }

            // Rebalancing is switched off later on; with over-relaxation,
            // late rho flips stall convergence.
            if it % BALANCE_EVERY == 0 && it <= BALANCE_UNTIL {
                if primal > BALANCE_RATIO * dual {
                    rho *= BALANCE_STEP;
                    u /= BALANCE_STEP;
                } else if dual > BALANCE_RATIO * primal {
                    rho /= BALANCE_STEP;
                    u *= BALANCE_STEP;
                }
            }
        }

        x *= scale;
        z *= scale;
        let sol = self.finalize(y, opts, x, z, iterations, converged);
        log_diagnostics("admm-bp", &sol.diagnostics);
        if sol.diagnostics.converged {
            Ok(sol)
        } else {
            Err(RecoveryError::NotConverged(Box::new(sol)))
        }
    }
}

impl PreparedAdmm {
    /// Picks the returned vector: the debiased refit, then the sparse
    /// iterate, then the projected iterate, whichever is feasible first.
    fn finalize(
        &self,
        y: &[f64],
        opts: &SolverOptions,
        x: DVector<f64>,
        z: DVector<f64>,
        iterations: usize,
        converged: bool,
    ) -> Solution {
        let accept = opts.epsilon + FEASIBILITY_SLACK;
        let n = self.phi.n();

        if opts.debias {
            let zmax = z.amax();
            let support = support_of(z.as_slice(), SUPPORT_REL_THRESHOLD * zmax);
            if !support.is_empty() && support.len() <= self.phi.m() {
                let y_vec = DVector::from_column_slice(y);
                if let Some(w) = lstsq_columns(self.phi.matrix(), &support, &y_vec) {
                    let mut sol = Solution::new(
                        &self.phi,
                        y,
                        scatter(n, &support, &w),
                        iterations,
                        converged,
                    );
                    if sol.diagnostics.residual <= accept {
                        sol.diagnostics.debiased = true;
                        return sol;
                    }
                }
            }
        }

        let sparse = Solution::new(&self.phi, y, z.as_slice().to_vec(), iterations, converged);
        if sparse.diagnostics.residual <= accept {
            return sparse;
        }
        Solution::new(&self.phi, y, x.as_slice().to_vec(), iterations, converged)
    }
}

#[inline]
fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Power iteration for the largest eigenvalue of a symmetric PSD matrix.
fn largest_eigenvalue(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = g * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            return next.max(norm);
        }
        lambda = next;
    }
    lambda
}
