//! Small dense symmetric linear algebra used throughout the crate.
//!
//! Everything here operates on symmetric matrices of modest size (feature
//! dimensions, not sample counts), so plain `nalgebra` dense types suffice.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative pivot tolerance for the normal-equation factorization.
pub const PIVOT_REL_TOL: f64 = 1e-12;

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sym_eigen(m: &Matrix) -> (Vector, Matrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vector::zeros(0), Matrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn lambda_max(m: &Matrix) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    let (values, _) = sym_eigen(m);
    values[values.len() - 1]
}

pub fn lambda_min(m: &Matrix) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    let (values, _) = sym_eigen(m);
    values[0]
}

/// Applies `f` to the spectrum of a symmetric matrix.
pub fn spectral_map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let (values, vectors) = sym_eigen(m);
    let mapped = Vector::from_iterator(values.len(), values.iter().map(|&v| f(v)));
    &vectors * Matrix::from_diagonal(&mapped) * vectors.transpose()
}

/// Inverse square root and inverse of an SPD matrix, or the smallest eigenvalue
/// when it does not clear `guard`.
pub fn spd_inverse_parts(m: &Matrix, guard: f64) -> Result<(Matrix, Matrix), f64> {
    let (values, vectors) = sym_eigen(m);
    let lo = values[0];
    if lo.is_nan() || lo <= guard {
        return Err(lo);
    }
    let inv_sqrt = Vector::from_iterator(values.len(), values.iter().map(|v| v.sqrt().recip()));
    let inv = Vector::from_iterator(values.len(), values.iter().map(|v| v.recip()));
    let inv_sqrt = symmetrize(&(&vectors * Matrix::from_diagonal(&inv_sqrt) * vectors.transpose()));
    let inv = symmetrize(&(&vectors * Matrix::from_diagonal(&inv) * vectors.transpose()));
    Ok((inv_sqrt, inv))
}

/// Outcome of solving `A x = b` for symmetric positive semi-definite `A`.
#[derive(Debug, Clone)]
pub struct PsdSolution {
    pub x: Vector,
    pub rank: usize,
    pub singular: bool,
}

/// Lower-triangular factor of a diagonally pivoted Cholesky decomposition,
/// `P^T A P = L L^T`, truncated at the numerical rank.
struct PivotedCholesky {
    l: Matrix,
    perm: Vec<usize>,
    rank: usize,
}

fn pivoted_cholesky(a: &Matrix, tol: f64) -> PivotedCholesky {
    let n = a.nrows();
    let mut work = symmetrize(a);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = Matrix::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        let (pivot, &best) =
            (k..n).map(|i| (i, &work[(i, i)])).max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty range");
        if best <= tol {
            break;
        }
        if pivot != k {
            work.swap_rows(k, pivot);
            work.swap_columns(k, pivot);
            l.swap_rows(k, pivot);
            perm.swap(k, pivot);
        }
        let d = work[(k, k)].sqrt();
        l[(k, k)] = d;
        for i in (k + 1)..n {
            l[(i, k)] = work[(i, k)] / d;
        }
        for j in (k + 1)..n {
            for i in j..n {
                let v = work[(i, j)] - l[(i, k)] * l[(j, k)];
                work[(i, j)] = v;
                work[(j, i)] = v;
            }
        }
        rank += 1;
    }
    PivotedCholesky { l, perm, rank }
}

/// Solves the normal equations `A x = b` for PSD `A`.
///
/// Full-rank systems go through a pivoted Cholesky solve. Rank-deficient
/// systems (pivot below `PIVOT_REL_TOL * trace(A)`) return the minimum-norm
/// solution via the spectral pseudo-inverse with the same threshold.
pub fn psd_solve(a: &Matrix, b: &Vector) -> PsdSolution {
    let n = a.nrows();
    if n == 0 {
        return PsdSolution { x: Vector::zeros(0), rank: 0, singular: false };
    }
    let tol = PIVOT_REL_TOL * a.trace().abs().max(f64::MIN_POSITIVE);
    let chol = pivoted_cholesky(a, tol);
    if chol.rank == n {
        let pb = Vector::from_iterator(n, chol.perm.iter().map(|&i| b[i]));
        let y = chol.l.solve_lower_triangular(&pb).expect("positive pivots");
        let z = chol.l.transpose().solve_upper_triangular(&y).expect("positive pivots");
        let mut x = Vector::zeros(n);
        for (k, &i) in chol.perm.iter().enumerate() {
            x[i] = z[k];
        }
        return PsdSolution { x, rank: n, singular: false };
    }
    let (values, vectors) = sym_eigen(a);
    let mut x = Vector::zeros(n);
    let mut rank = 0;
    for k in 0..n {
        if values[k] > tol {
            let u = vectors.column(k);
            x += u * (u.dot(b) / values[k]);
            rank += 1;
        }
    }
    PsdSolution { x, rank, singular: true }
}

/// `v^T M v`.
pub fn quad_form(m: &Matrix, v: &Vector) -> f64 {
    v.dot(&(m * v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_solve_full_rank_matches_direct_inverse() {
        let a = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let sol = psd_solve(&a, &b);
        assert!(!sol.singular);
        let direct = a.clone().try_inverse().unwrap() * &b;
        assert!((sol.x - direct).norm() < 1e-12);
    }

    #[test]
    fn psd_solve_rank_deficient_returns_minimum_norm() {
        // Rank one: a = u u^T with u = (1, 1).
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = Vector::from_vec(vec![2.0, 2.0]);
        let sol = psd_solve(&a, &b);
        assert!(sol.singular);
        assert_eq!(sol.rank, 1);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (w, inv) = spd_inverse_parts(&a, 1e-10).unwrap();
        assert!((&w * &w - &inv).norm() < 1e-12);
        assert!((&w * &a * &w - Matrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected_by_guard() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_inverse_parts(&a, 1e-10).is_err());
    }
}
