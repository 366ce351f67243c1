//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// General square solve by LU with partial pivoting.
pub fn solve(a: &Mat, b: &Vector) -> Result<Vector> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SolveFailed("singular matrix in LU solve".into()))
}

/// Symmetric positive-definite solve by Cholesky.
pub fn spd_solve(a: &Mat, b: &Vector) -> Result<Vector> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolveFailed("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Moore-Penrose pseudo-inverse; singular values at or below
/// `tol * max_singular_value` are treated as zero.
pub fn pinv(a: &Mat, tol: f64) -> Mat {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = tol * smax.max(f64::MIN_POSITIVE);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut sigma_inv = Mat::zeros(v_t.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            sigma_inv[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * sigma_inv * u.transpose()
}

pub fn singular_values(a: &Mat) -> Vector {
    a.clone().svd(false, false).singular_values
}

/// Eigenvalues of the symmetric part `(a + a^T) / 2`, ascending.
pub fn sym_part_eigenvalues(a: &Mat) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut eig: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

/// Moduli of all (complex) eigenvalues, descending.
pub fn eigenvalue_moduli(a: &Mat) -> Vec<f64> {
    let mut m: Vec<f64> = a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    m.sort_by(|x, y| y.partial_cmp(x).unwrap());
    m
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Row-stochastic matrix power by repeated squaring.
pub fn mat_pow(a: &Mat, mut n: u64) -> Mat {
    let mut result = Mat::identity(a.nrows(), a.ncols());
    let mut base = a.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        n >>= 1;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_one() {
        let a = Mat::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        let p = pinv(&a, 1e-12);
        // a = 0.5 * u u^T with u = (1,-1)/sqrt2, so a^+ = 2 * u u^T
        let expected = Mat::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((p - expected).abs().max() < 1e-12);
    }

    #[test]
    fn spd_solve_matches_lu() {
        let a = Mat::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let x1 = spd_solve(&a, &b).unwrap();
        let x2 = solve(&a, &b).unwrap();
        assert!((x1 - x2).amax() < 1e-13);
    }

    #[test]
    fn eigen_moduli_of_two_state_chain() {
        let k = Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let m = eigenvalue_moduli(&k);
        assert!((m[0] - 1.0).abs() < 1e-12);
        assert!((m[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn mat_pow_matches_repeated_product() {
        let k = Mat::from_row_slice(2, 2, &[0.7, 0.3, 0.4, 0.6]);
        let p5 = mat_pow(&k, 5);
        let direct = &k * &k * &k * &k * &k;
        assert!((p5 - direct).amax() < 1e-14);
    }
}
