use nalgebra::{DMatrix, DVector};

use super::{check_finite, check_square, Matrix, Vector};
use crate::error::{Error, Result};

/// Default relative eigenvalue separation, scaled by `max(1, spectral radius)`.
pub const DEFAULT_SEPARATION_TOL: f64 = 1e-8;

/// Imaginary parts above `IMAG_TOL * max(1, spectral radius)` mark a complex spectrum.
const IMAG_TOL: f64 = 1e-9;

const SCHUR_MAX_ITERS: usize = 10_000;

/// Real diagonalization `M = Q · diag(lambdas) · Q⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomp {
    /// Eigenvectors as unit-norm columns.
    pub q: Matrix,
    pub lambdas: Vector,
    pub q_inv: Matrix,
    /// `min |λ_i − λ_j|` over `i ≠ j`; infinite for 1×1 input.
    pub min_separation: f64,
}

impl EigenDecomp {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.lambdas.iter().fold(0.0, |acc, l| acc.max(l.abs()))
    }

    /// Frobenius condition number of the eigenvector basis.
    pub fn condition(&self) -> f64 {
        self.q.norm() * self.q_inv.norm()
    }

    pub fn reconstruct(&self) -> Matrix {
        &self.q * Matrix::from_diagonal(&self.lambdas) * &self.q_inv
    }

    /// `Q · diag(f(λ_i)) · Q⁻¹`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let mut scaled = self.q.clone();
        for (mut col, &l) in scaled.column_iter_mut().zip(self.lambdas.iter()) {
            col *= f(l);
        }
        scaled * &self.q_inv
    }
}

/// Real eigendecomposition of a square matrix whose spectrum is real and
/// separated by at least `separation_tol · max(1, ρ)`.
pub fn eig_real(m: &Matrix, separation_tol: f64) -> Result<EigenDecomp> {
    check_square(m, "eig_real")?;
    check_finite(m, "eig_real input")?;
    let d = m.nrows();
    if d == 1 {
        return Ok(EigenDecomp {
            q: Matrix::identity(1, 1),
            lambdas: DVector::from_element(1, m[(0, 0)]),
            q_inv: Matrix::identity(1, 1),
            min_separation: f64::INFINITY,
        });
    }

    let schur = m
        .clone()
        .try_schur(f64::EPSILON, SCHUR_MAX_ITERS)
        .ok_or(Error::NoConvergence)?;
    let complex = schur.complex_eigenvalues();
    let radius = complex.iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
    let scale = radius.max(1.0);
    let max_imag = complex.iter().fold(0.0f64, |acc, z| acc.max(z.im.abs()));
    if max_imag > IMAG_TOL * scale {
        return Err(Error::ComplexSpectrum { max_imag });
    }

    let (schur_q, t) = schur.unpack();
    let triangular = (0..d - 1).all(|i| {
        t[(i + 1, i)].abs() <= f64::EPSILON * (t[(i, i)].abs() + t[(i + 1, i + 1)].abs())
    });
    let lambdas: Vector = if triangular {
        t.diagonal()
    } else {
        complex.map(|z| z.re)
    };

    let min_separation = min_gap(&lambdas);
    if min_separation < separation_tol * scale {
        return Err(Error::NearDegenerate { min_separation });
    }

    let mut q = DMatrix::<f64>::zeros(d, d);
    for (i, &lambda) in lambdas.iter().enumerate() {
        let v = if triangular {
            &schur_q * triangular_eigenvector(&t, i)
        } else {
            null_vector(m, lambda)
        };
        let norm = v.norm();
        q.set_column(i, &(v / norm));
    }
    let q_inv = q
        .clone()
        .try_inverse()
        .ok_or(Error::NearDegenerate { min_separation })?;
    Ok(EigenDecomp {
        q,
        lambdas,
        q_inv,
        min_separation,
    })
}

fn min_gap(lambdas: &Vector) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..lambdas.len() {
        for j in i + 1..lambdas.len() {
            gap = gap.min((lambdas[i] - lambdas[j]).abs());
        }
    }
    gap
}

/// Eigenvector of upper-triangular `t` for the eigenvalue `t[(i, i)]`.
fn triangular_eigenvector(t: &Matrix, i: usize) -> Vector {
    let d = t.nrows();
    let lambda = t[(i, i)];
    let mut v = DVector::<f64>::zeros(d);
    v[i] = 1.0;
    for j in (0..i).rev() {
        let mut acc = 0.0;
        for l in j + 1..=i {
            acc += t[(j, l)] * v[l];
        }
        v[j] = -acc / (t[(j, j)] - lambda);
    }
    v
}

/// Right singular vector of `m − λI` for its smallest singular value.
fn null_vector(m: &Matrix, lambda: f64) -> Vector {
    let d = m.nrows();
    let shifted = m - Matrix::identity(d, d) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &s)| {
            if s < bv {
                (i, s)
            } else {
                (bi, bv)
            }
        });
    v_t.row(imin).transpose()
}

/// Real principal logarithm of a matrix with distinct positive eigenvalues.
pub fn logm_real(m: &Matrix) -> Result<Matrix> {
    let eig = eig_real(m, DEFAULT_SEPARATION_TOL)?;
    if let Some(&value) = eig.lambdas.iter().find(|&&l| l <= 0.0) {
        return Err(Error::NonPositiveEigenvalue { value });
    }
    Ok(eig.map_spectrum(f64::ln))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use nalgebra::dmatrix;

    #[test]
    fn diagonal_input() {
        let m = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let e = eig_real(&m, 1e-8).unwrap();
        let mut l: Vec<f64> = e.lambdas.iter().copied().collect();
        l.sort_by(f64::total_cmp);
        assert_eq!(l, vec![1.0, 2.0, 3.0]);
        // every column is ± a coordinate vector
        for col in e.q.column_iter() {
            let nonzero = col.iter().filter(|v| v.abs() > 1e-14).count();
            assert_eq!(nonzero, 1);
        }
        assert!((e.reconstruct() - m).norm() < 1e-12);
    }

    #[test]
    fn repeated_eigenvalue_is_degenerate() {
        let m = Matrix::identity(2, 2);
        assert!(matches!(
            eig_real(&m, 1e-8),
            Err(Error::NearDegenerate { .. })
        ));
    }

    #[test]
    fn rotation_is_complex() {
        let m = dmatrix![0.0, 1.0; -1.0, 0.0];
        assert!(matches!(
            eig_real(&m, 1e-8),
            Err(Error::ComplexSpectrum { .. })
        ));
    }

    #[test]
    fn nonsymmetric_reconstruction() {
        let m = dmatrix![1.76, -0.1; 0.98, 0.0];
        let e = eig_real(&m, 1e-8).unwrap();
        assert!((e.reconstruct() - &m).norm() <= 1e-10 * m.norm().max(1.0));
        let ident = &e.q * &e.q_inv;
        assert!((ident - Matrix::identity(2, 2)).norm() <= 2e-10);
    }

    #[test]
    fn log_of_identity_is_zero() {
        let l = logm_real(&Matrix::identity(1, 1)).unwrap();
        assert_eq!(l[(0, 0)], 0.0);
        // identity of size >= 2 has a repeated eigenvalue
        assert!(logm_real(&Matrix::identity(3, 3)).is_err());
    }

    #[test]
    fn log_of_diagonal() {
        let e1 = 1f64.exp();
        let m = dmatrix![e1, 0.0; 0.0, e1 * e1];
        let l = logm_real(&m).unwrap();
        assert!((l - dmatrix![1.0, 0.0; 0.0, 2.0]).abs().max() < 1e-14);
    }

    #[test]
    fn log_round_trip_on_propagator() {
        let a = dmatrix![1.76, -0.1; 0.98, 0.0];
        let phi = expm(&(&a * 0.1)).unwrap();
        let back = logm_real(&phi).unwrap() / 0.1;
        assert!((back - a).abs().max() < 1e-8);
    }

    #[test]
    fn negative_eigenvalue_has_no_real_log() {
        let m = dmatrix![-1.0, 0.0; 0.0, 2.0];
        assert!(matches!(
            logm_real(&m),
            Err(Error::NonPositiveEigenvalue { .. })
        ));
    }
}
