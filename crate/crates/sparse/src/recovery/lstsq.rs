use nalgebra::{DMatrix, DVector};

/// Relative threshold on `|R_ii| / max |R_jj|` below which the column set is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Least-squares coefficients for `phi[:, cols] w ~ y`, or `None` when the
/// selected columns are (numerically) linearly dependent or outnumber rows.
pub(crate) fn lstsq_columns(
    phi: &DMatrix<f64>,
    cols: &[usize],
    y: &DVector<f64>,
) -> Option<DVector<f64>> {
    let k = cols.len();
    if k == 0 {
        return Some(DVector::zeros(0));
    }
    if k > phi.nrows() {
        return None;
    }
    let sub = phi.select_columns(cols);
    let qr = sub.qr();
    let r = qr.r();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 || (0..k).any(|i| r[(i, i)].abs() <= RANK_TOL * max_diag) {
        return None;
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, k).into_owned();
    r.solve_upper_triangular(&rhs)
}

/// Scatters support coefficients into a dense length-`n` vector.
pub(crate) fn scatter(n: usize, cols: &[usize], w: &DVector<f64>) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for (&c, &v) in cols.iter().zip(w.iter()) {
        z[c] = v;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_combination() {
        let phi = DMatrix::from_row_slice(
            3,
            4,
            &[1.0, 0.0, 2.0, 1.0, 0.0, 1.0, -1.0, 3.0, 1.0, 1.0, 0.0, -2.0],
        );
        let y = DVector::from_vec(vec![1.0 * 2.0 + 2.0 * -0.5, 0.0 + -1.0 * -0.5, 2.0]);
        let w = lstsq_columns(&phi, &[0, 2], &y).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-12);
        assert!((w[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn dependent_columns_are_rejected() {
        let phi = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        assert!(lstsq_columns(&phi, &[0, 1], &y).is_none());
        assert!(lstsq_columns(&phi, &[0, 1, 2], &y).is_none());
    }
}
