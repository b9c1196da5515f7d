//! Dense matrix primitives shared by the rest of the crate: matrix
//! exponential, symmetric eigendecomposition, Lyapunov solve, stable
//! log-determinants and PSD factorizations.
//!
//! Everything here targets desk-scale problems (n up to a few tens), so the
//! Lyapunov equation is solved by Kronecker vectorization rather than a
//! Schur-based method.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::{real, Real};

#[derive(Debug, Error)]
pub enum MatError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (relative asymmetry {rel:e})")]
    NotSymmetric { rel: f64 },
    #[error("Lyapunov operator is singular: A and -A share an eigenvalue pair summing to zero")]
    SingularLyapunov,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not positive semidefinite (eigenvalue {value:e})")]
    NotPositiveSemidefinite { value: f64 },
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// and orthonormal eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymEig<T: Real> {
    pub eigenvalues: DVector<T>,
    pub eigenvectors: DMatrix<T>,
}

impl<T: Real> SymEig<T> {
    /// Rebuilds `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let d = DMatrix::from_diagonal(&self.eigenvalues);
        &self.eigenvectors * d * self.eigenvectors.transpose()
    }
}

fn check_square<T: Real>(m: &DMatrix<T>) -> Result<usize, MatError> {
    if m.nrows() != m.ncols() {
        return Err(MatError::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

fn check_finite<T: Real>(m: &DMatrix<T>) -> Result<(), MatError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MatError::NonFinite)
    }
}

pub fn frobenius<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().map(|x| *x * *x).fold(T::zero(), |a, b| a + b).sqrt()
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * real::<T>(0.5)
}

/// Relative asymmetry ‖M - Mᵀ‖_F / ‖M‖_F (zero for the zero matrix).
pub fn relative_asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let scale = frobenius(m);
    if scale == T::zero() {
        return T::zero();
    }
    frobenius(&(m - m.transpose())) / scale
}

/// Matrix exponential via scaling-and-squaring with a Padé approximant.
pub fn expm<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>, MatError> {
    check_square(m)?;
    check_finite(m)?;
    Ok(m.exp())
}

/// Solves the continuous Lyapunov equation `A X + X Aᵀ = -Q` for symmetric
/// `Q` by Kronecker vectorization.
///
/// Errors when the operator is singular, i.e. some eigenvalue pair of `A`
/// satisfies λ_i + λ_j = 0.
pub fn lyap_solve<T: Real>(a: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>, MatError> {
    let n = check_square(a)?;
    check_finite(a)?;
    if q.nrows() != n || q.ncols() != n {
        return Err(MatError::DimensionMismatch(format!(
            "Q must be {n}x{n}, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let asym = relative_asymmetry(q);
    if asym > real::<T>(1e-8) {
        return Err(MatError::NotSymmetric {
            rel: asym.to_f64().unwrap_or(f64::NAN),
        });
    }

    // Solvability: no eigenvalue pair of A may sum to zero.
    let eigs = a.complex_eigenvalues();
    let cnorm = |z: &nalgebra::Complex<T>| (z.re * z.re + z.im * z.im).sqrt();
    let scale = eigs
        .iter()
        .map(cnorm)
        .fold(T::zero(), |acc, v| if v > acc { v } else { acc });
    let tol = real::<T>(1e-12) * if scale > T::one() { scale } else { T::one() };
    for i in 0..n {
        for j in 0..n {
            if cnorm(&(eigs[i] + eigs[j])) <= tol {
                return Err(MatError::SingularLyapunov);
            }
        }
    }

    // vec(AX + XAᵀ) = (I ⊗ A + A ⊗ I) vec(X) with column-major stacking.
    let eye = DMatrix::<T>::identity(n, n);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|x| -*x));
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or(MatError::SingularLyapunov)?;
    let x = DMatrix::from_iterator(n, n, sol.iter().copied());
    Ok(symmetrize(&x))
}

/// Symmetric eigendecomposition. Input must be symmetric within 1e-10
/// relative asymmetry; it is symmetrized before factorization.
pub fn sym_eig<T: Real>(s: &DMatrix<T>) -> Result<SymEig<T>, MatError> {
    check_square(s)?;
    check_finite(s)?;
    let asym = relative_asymmetry(s);
    if asym > real::<T>(1e-10) {
        return Err(MatError::NotSymmetric {
            rel: asym.to_f64().unwrap_or(f64::NAN),
        });
    }
    let se = nalgebra::SymmetricEigen::new(symmetrize(s));
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[j]
            .partial_cmp(&se.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let eigenvectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| se.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// `ln det S` of a symmetric positive-definite matrix, computed from the
/// Cholesky factor rather than a raw determinant.
pub fn logdet_psd<T: Real>(s: &DMatrix<T>) -> Result<T, MatError> {
    check_square(s)?;
    check_finite(s)?;
    let asym = relative_asymmetry(s);
    if asym > real::<T>(1e-8) {
        return Err(MatError::NotSymmetric {
            rel: asym.to_f64().unwrap_or(f64::NAN),
        });
    }
    let chol = nalgebra::Cholesky::new(symmetrize(s)).ok_or(MatError::NotPositiveDefinite)?;
    let two = real::<T>(2.0);
    Ok(chol
        .l()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .fold(T::zero(), |a, b| a + b)
        * two)
}

/// Factor `F` with `F Fᵀ = S` for a symmetric positive-SEMIdefinite `S`,
/// built from the eigendecomposition so that singular directions are kept
/// (with zero columns). Eigenvalues below `-1e-10 · λ_max` are rejected.
pub fn psd_sqrt_factor<T: Real>(s: &DMatrix<T>) -> Result<DMatrix<T>, MatError> {
    let se = sym_eig(s)?;
    let lmax = se.eigenvalues.iter().fold(T::zero(), |acc, &v| if v > acc { v } else { acc });
    let floor = -real::<T>(1e-10) * if lmax > T::one() { lmax } else { T::one() };
    let mut f = se.eigenvectors.clone();
    for (j, &l) in se.eigenvalues.iter().enumerate() {
        if l < floor {
            return Err(MatError::NotPositiveSemidefinite {
                value: l.to_f64().unwrap_or(f64::NAN),
            });
        }
        let root = if l > T::zero() { l.sqrt() } else { T::zero() };
        for i in 0..f.nrows() {
            f[(i, j)] *= root;
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(rng: &mut ChaCha12Rng, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        let e = expm(&z).unwrap();
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn expm_diagonal_matches_scalar_exponentials() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let e = expm(&m).unwrap();
        assert_relative_eq!(e[(0, 0)], 0.367879441171442, epsilon = 1e-12);
        assert_relative_eq!(e[(1, 1)], 0.135335283236613, epsilon = 1e-12);
        assert_relative_eq!(e[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn expm_group_inverse() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 4);
            let prod = expm(&m).unwrap() * expm(&(-&m)).unwrap();
            assert!(frobenius(&(prod - DMatrix::identity(4, 4))) <= 1e-10);
        }
    }

    #[test]
    fn expm_additivity_on_commuting_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..20 {
            // M and M² always commute.
            let m = random_matrix(&mut rng, 3) * 0.7;
            let m2 = &m * &m;
            let lhs = expm(&m).unwrap() * expm(&m2).unwrap();
            let rhs = expm(&(&m + &m2)).unwrap();
            assert!(frobenius(&(lhs - &rhs)) <= 1e-9 * frobenius(&rhs).max(1.0));
        }
    }

    #[test]
    fn expm_rejects_non_square_and_non_finite() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(expm(&m), Err(MatError::NonSquare { .. })));
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(expm(&m), Err(MatError::NonFinite)));
    }

    #[test]
    fn lyap_identity_case() {
        let a = DMatrix::from_diagonal_element(2, 2, -0.5);
        let q = DMatrix::identity(2, 2);
        let x = lyap_solve(&a, &q).unwrap();
        assert_relative_eq!(x, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn lyap_scalar_integral() {
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        let x = lyap_solve(&a, &q).unwrap();
        assert_relative_eq!(x[(0, 0)], 0.5, epsilon = 1e-13);
    }

    #[test]
    fn lyap_zero_drift_is_singular() {
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(lyap_solve(&a, &q), Err(MatError::SingularLyapunov)));
    }

    #[test]
    fn lyap_residual_on_random_stable_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            // Shift a random matrix to make it comfortably Hurwitz.
            let mut a = random_matrix(&mut rng, n);
            let shift = 1.5 + frobenius(&a);
            for i in 0..n {
                a[(i, i)] -= shift;
            }
            let c = random_matrix(&mut rng, n);
            let q = &c * c.transpose();
            let x = lyap_solve(&a, &q).unwrap();
            let resid = frobenius(&(&a * &x + &x * a.transpose() + &q));
            let bound = 1e-10 * (frobenius(&a) * frobenius(&x) + frobenius(&q));
            assert!(resid <= bound, "residual {resid} above bound {bound}");
        }
    }

    #[test]
    fn sym_eig_identity_and_diagonal() {
        let e = sym_eig(&DMatrix::<f64>::identity(2, 2)).unwrap();
        assert_relative_eq!(e.eigenvalues[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.eigenvalues[1], 1.0, epsilon = 1e-14);

        let e = sym_eig(&DMatrix::<f64>::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])).unwrap();
        assert_relative_eq!(e.eigenvalues[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(e.eigenvalues[1], 1.0, epsilon = 1e-14);
        // Axis vectors up to sign.
        assert_relative_eq!(e.eigenvectors[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(e.eigenvectors[(1, 1)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sym_eig_reconstruction_and_orthonormality() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(1..=6);
            let c = random_matrix(&mut rng, n);
            let s = &c * c.transpose();
            let e = sym_eig(&s).unwrap();
            assert!(frobenius(&(e.reconstruct() - &s)) <= 1e-10 * frobenius(&s).max(1e-30));
            let vtv = e.eigenvectors.transpose() * &e.eigenvectors;
            assert!(frobenius(&(vtv - DMatrix::identity(n, n))) <= 1e-12);
        }
    }

    #[test]
    fn sym_eig_rejects_non_square() {
        assert!(sym_eig(&DMatrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn logdet_examples() {
        assert_relative_eq!(logdet_psd(&DMatrix::<f64>::identity(4, 4)).unwrap(), 0.0, epsilon = 1e-13);
        let e = std::f64::consts::E;
        let m = DMatrix::from_row_slice(2, 2, &[e, 0.0, 0.0, e * e]);
        assert_relative_eq!(logdet_psd(&m).unwrap(), 3.0, epsilon = 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(logdet_psd(&bad), Err(MatError::NotPositiveDefinite)));
    }

    #[test]
    fn logdet_matches_eigenvalue_sum() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(1..=6);
            let c = random_matrix(&mut rng, n) + DMatrix::identity(n, n) * 2.0;
            let s = &c * c.transpose();
            let ld = logdet_psd(&s).unwrap();
            let sum: f64 = sym_eig(&s).unwrap().eigenvalues.iter().map(|l| l.ln()).sum();
            assert_relative_eq!(ld, sum, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn psd_factor_roundtrip_handles_singular_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        // Rank-deficient PSD matrix.
        let c = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let s = &c * c.transpose();
        let f = psd_sqrt_factor(&s).unwrap();
        assert!(frobenius(&(&f * f.transpose() - &s)) <= 1e-12 * frobenius(&s));
    }
}
