//! Small dense helpers shared by the simulation and optimization code.

use nalgebra::{DMatrix, DVector};

use super::ModelError;

/// Absolute eigenvalue floor, scaled by `max(1, |c|_max)`.
pub const PSD_TOL: f64 = 1e-10;

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `out = m * x`.
pub fn mat_vec_into(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = m.nrows();
    for (i, o) in out.iter_mut().enumerate().take(n) {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate() {
            acc += m[(i, j)] * xj;
        }
        *o = acc;
    }
}

/// `<x, m x>`.
pub fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Largest `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Lower-triangular `sigma` with `sigma * sigma^T = c` for a symmetric
/// positive-semidefinite `c`, including rank-deficient ones.
///
/// Runs a diagonally pivoted Cholesky that stops once the remaining Schur
/// complement is below tolerance, then restores lower-triangular form with a
/// QR of the permuted factor. A reconstruction error above
/// `PSD_TOL * (1 + |c|_max)` means `c` has a materially negative eigenvalue.
pub fn psd_factor(c: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
    let n = c.nrows();
    if c.ncols() != n {
        return Err(ModelError::ShapeMismatch {
            expected: "square matrix".into(),
            found: format!("{}x{} matrix", n, c.ncols()),
        });
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite("covariance".into()));
    }
    let scale = 1.0 + max_abs(c);
    let stop_tol = 1e-14 * scale;

    // Work on the lower triangle of a symmetrized copy.
    let mut s = (c + c.transpose()) * 0.5;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let (piv, dmax) =
            (k..n)
                .map(|i| (i, s[(i, i)]))
                .fold((k, f64::NEG_INFINITY), |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                });
        if dmax <= stop_tol {
            break;
        }
        if piv != k {
            s.swap_rows(k, piv);
            s.swap_columns(k, piv);
            l.swap_rows(k, piv);
            perm.swap(k, piv);
        }
        let root = dmax.sqrt();
        l[(k, k)] = root;
        for i in (k + 1)..n {
            l[(i, k)] = s[(i, k)] / root;
        }
        for j in (k + 1)..n {
            for i in j..n {
                let v = s[(i, j)] - l[(i, k)] * l[(j, k)];
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
    }

    // Undo the permutation: row perm[k] of sigma is row k of l.
    let identity_perm = perm.iter().enumerate().all(|(i, &p)| i == p);
    let sigma = if identity_perm {
        l
    } else {
        let mut pl = DMatrix::<f64>::zeros(n, n);
        for (k, &p) in perm.iter().enumerate() {
            pl.set_row(p, &l.row(k));
        }
        let r = pl.transpose().qr().r();
        let mut lower = r.transpose();
        for j in 0..n {
            if lower[(j, j)] < 0.0 {
                for i in 0..n {
                    lower[(i, j)] = -lower[(i, j)];
                }
            }
        }
        lower
    };

    let err = max_abs(&(&sigma * sigma.transpose() - c));
    if err > PSD_TOL * scale {
        return Err(ModelError::IndefiniteMatrix { residual: err });
    }
    Ok(sigma)
}

/// Solves `m x = b` in the least-squares, minimum-norm sense with a
/// rank-revealing SVD. Returns the solution and the residual `|m x - b|_inf`.
pub fn min_norm_solve(m: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, f64) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    let eps = (rel_tol * smax).max(f64::MIN_POSITIVE);
    let x = svd
        .solve(b, eps)
        .unwrap_or_else(|_| DVector::zeros(m.ncols()));
    let res = (m * &x - b).amax();
    (x, res)
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let ncols = m.ncols();
    if ncols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to at least `ncols` rows so the SVD exposes every right singular vector.
    let rows = m.nrows().max(ncols);
    let mut padded = DMatrix::<f64>::zeros(rows, ncols);
    padded.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    let cutoff = (rel_tol * smax.max(1.0)).max(f64::MIN_POSITIVE);
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(ncols, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn is_lower(m: &DMatrix<f64>) -> bool {
        (0..m.nrows()).all(|i| ((i + 1)..m.ncols()).all(|j| m[(i, j)] == 0.0))
    }

    #[test]
    fn identity_factors_to_identity() {
        let s = psd_factor(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s, DMatrix::identity(3, 3));
    }

    #[test]
    fn rank_one_diagonal() {
        let c = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]);
        let s = psd_factor(&c).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn singular_first_coordinate_still_lower_triangular() {
        // Pivoting moves the second coordinate first; the QR pass restores shape.
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let s = psd_factor(&c).unwrap();
        assert!(is_lower(&s));
        assert!(max_abs(&(&s * s.transpose() - &c)) < 1e-15);
    }

    #[test]
    fn two_by_two_multiplies_back() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = psd_factor(&c).unwrap();
        assert!(is_lower(&s));
        assert!(max_abs(&(&s * s.transpose() - &c)) <= 1e-10 * (1.0 + 2.0));
    }

    #[test]
    fn indefinite_is_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            psd_factor(&c),
            Err(ModelError::IndefiniteMatrix { .. })
        ));
    }

    #[test]
    fn tiny_negative_eigenvalue_is_clipped() {
        let mut c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        c[(1, 1)] -= 1e-13;
        let s = psd_factor(&c).unwrap();
        assert!(max_abs(&(&s * s.transpose() - &c)) <= 1e-10 * 2.0);
    }

    #[test]
    fn min_norm_solve_handles_rank_deficiency() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let (x, res) = min_norm_solve(&m, &b, 1e-12);
        assert!(res < 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_ones_row() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let n = null_space(&m, 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!((m * n).amax() < 1e-12);
    }

    fn random_psd(d: usize, rank: usize, entries: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_fn(rank, d, |i, j| entries[(i * d + j) % entries.len()]);
        a.transpose() * a
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn factor_multiplies_back(
            d in 1usize..6,
            rank_drop in 0usize..3,
            entries in proptest::collection::vec(-3.0f64..3.0, 36),
        ) {
            let rank = d.saturating_sub(rank_drop).max(1);
            let c = random_psd(d, rank, &entries);
            let s = psd_factor(&c).unwrap();
            prop_assert!(is_lower(&s));
            let err = max_abs(&(&s * s.transpose() - &c));
            prop_assert!(err <= 1e-10 * (1.0 + max_abs(&c)), "err {err}");
        }
    }
}
