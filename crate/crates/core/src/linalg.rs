//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest eigenvalue of the symmetric part `(m + mᵀ)/2`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Evaluates `Σ_j coeffs[j] · Aʲ` by Horner's rule. An empty list gives the zero matrix.
pub fn matrix_polynomial(coeffs: &[f64], a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for &c in coeffs.iter().rev() {
        acc = &acc * a;
        for i in 0..n {
            acc[(i, i)] += c;
        }
    }
    acc
}

/// `m^p` by repeated squaring.
pub fn matrix_power(m: &DMatrix<f64>, mut p: u64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut base = m.clone();
    while p > 0 {
        if p & 1 == 1 {
            result = &result * &base;
        }
        p >>= 1;
        if p > 0 {
            base = &base * &base;
        }
    }
    result
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random symmetric PSD matrix `G Gᵀ` with `G` of the given rank.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, rank.max(1));
    &g * g.transpose()
}

/// Random antisymmetric matrix `(G − Gᵀ)/2`.
pub fn random_antisymmetric<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n);
    (&g - g.transpose()) * 0.5
}

/// Rescales `m` so its spectral norm equals `target` (no-op for the zero matrix).
pub fn scale_to_norm(m: &DMatrix<f64>, target: f64) -> DMatrix<f64> {
    let s = spectral_norm(m);
    if s == 0.0 {
        m.clone()
    } else {
        m * (target / s)
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn horner_matches_explicit_sum() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        let p = matrix_polynomial(&[1.0, -0.5, 0.25], &a);
        let expected = DMatrix::identity(2, 2) - &a * 0.5 + (&a * &a) * 0.25;
        assert_relative_eq!(p, expected, epsilon = 1e-15);
        assert_eq!(matrix_polynomial(&[], &a), DMatrix::zeros(2, 2));
    }

    #[test]
    fn power_by_squaring() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let p = matrix_power(&m, 13);
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[1.0, 13.0, 0.0, 1.0]));
        assert_eq!(matrix_power(&m, 0), DMatrix::identity(2, 2));
    }

    #[test]
    fn spectral_norm_of_rotation_is_one() {
        let (s, c) = 0.3_f64.sin_cos();
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert_relative_eq!(spectral_norm(&r), 1.0, epsilon = 1e-14);
        assert_relative_eq!(min_sym_eigenvalue(&r), c, epsilon = 1e-14);
    }
}
