//! Small dense linear-algebra helpers that nalgebra does not expose directly.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Orthonormal basis for the null space of `j` (m x n, m <= n), returned as an
/// (n-m) x n matrix whose rows span `null(j)`.
///
/// Computed from a full Householder QR of `j^T`: the trailing n-m columns of Q
/// complete the range of `j^T` to an orthonormal basis of R^n. Fails with
/// [`Error::RankDeficient`] when a diagonal entry of R collapses, i.e. when
/// `rank(j) < m`.
pub fn null_space_basis(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, n) = j.shape();
    assert!(m <= n, "null_space_basis requires m <= n, got {m} x {n}");
    let at = j.transpose(); // n x m
    let (q, r) = full_qr(&at);

    // Rank check on R's diagonal relative to the largest column norm.
    let scale = at
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = scale * 1e-12 * (n as f64);
    let rank = (0..m).take_while(|&k| r[(k, k)].abs() > tol).count();
    if rank < m {
        return Err(Error::RankDeficient { rank, expected: m });
    }

    let mut basis = DMatrix::zeros(n - m, n);
    for k in 0..n - m {
        basis.row_mut(k).tr_copy_from(&q.column(m + k));
    }
    Ok(basis)
}

/// Full QR decomposition of a tall matrix `a` (n x m, n >= m) by Householder
/// reflections. Returns the complete square Q (n x n) and R (n x m).
pub fn full_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = a.shape();
    assert!(n >= m, "full_qr expects a tall matrix, got {n} x {m}");
    let mut r = a.clone();
    let mut q = DMatrix::<f64>::identity(n, n);

    for k in 0..m {
        let tail = n - k;
        let mut v = DVector::zeros(tail);
        for i in 0..tail {
            v[i] = r[(k + i, k)];
        }
        let norm = v.norm();
        if norm <= f64::MIN_POSITIVE {
            continue; // column already zero below the diagonal
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vs = v.norm_squared();
        if vs <= f64::MIN_POSITIVE {
            continue;
        }

        // R <- H R on the trailing block.
        for col in k..m {
            let mut dot = 0.0;
            for i in 0..tail {
                dot += v[i] * r[(k + i, col)];
            }
            let coef = 2.0 * dot / vs;
            for i in 0..tail {
                r[(k + i, col)] -= coef * v[i];
            }
        }
        // Q <- Q H accumulates the reflectors.
        for row in 0..n {
            let mut dot = 0.0;
            for i in 0..tail {
                dot += q[(row, k + i)] * v[i];
            }
            let coef = 2.0 * dot / vs;
            for i in 0..tail {
                q[(row, k + i)] -= coef * v[i];
            }
        }
    }
    (q, r)
}

/// Extremal eigenvalues `(min, max)` of a symmetric matrix.
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Symmetric part `(m + m^T) / 2`; guards eigensolvers against roundoff skew.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn is_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_reconstructs_input() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 9.0]);
        let (q, r) = full_qr(&a);
        let back = &q * &r;
        assert!((back - &a).amax() < 1e-12);
        let qtq = q.transpose() * &q;
        assert!((qtq - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn null_basis_is_orthonormal_and_annihilated() {
        let j = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, -1.0, 2.0, 0.0, 3.0, 1.0, -1.0]);
        let b = null_space_basis(&j).unwrap();
        assert_eq!(b.shape(), (2, 4));
        let prod = &j * b.transpose();
        assert!(prod.amax() < 1e-12);
        let gram = &b * b.transpose();
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn null_basis_detects_rank_deficiency() {
        // Second row is a multiple of the first.
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        match null_space_basis(&j) {
            Err(Error::RankDeficient { rank, expected }) => {
                assert_eq!(rank, 1);
                assert_eq!(expected, 2);
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }
}
