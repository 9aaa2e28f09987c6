//! Dense kernels for the small matrices used throughout the crate: the
//! matrix exponential and its Fréchet derivative, real eigendecomposition,
//! the real matrix logarithm, singular values and a cached propagator
//! `t ↦ e^{At}`.

mod eigen;
mod expm;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use eigen::{eig_real, logm_real, EigenDecomp, DEFAULT_SEPARATION_TOL};
pub use expm::expm;
pub(crate) use expm::{expm_frechet_block, expm_unchecked};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenbases worse conditioned than this are not used for propagation.
///
/// Near a defective matrix the spectral propagator loses roughly
/// `ε · cond(Q)²` in relative accuracy, so this keeps it near 1e-10.
pub const MAX_BASIS_CONDITION: f64 = 1e3;

pub(crate) fn check_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "{what}: expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(what))
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vector {
    let mut s = m.clone().svd(false, false).singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn min_singular_value(m: &Matrix) -> Result<f64> {
    check_square(m, "min_singular_value")?;
    Ok(singular_values(m).min())
}

/// `t ↦ e^{At}` for one fixed `A`.
///
/// When `A` has a well-separated real spectrum and a well-conditioned
/// eigenbasis, the decomposition is computed once and every evaluation costs
/// `d` scalar exponentials. Otherwise each evaluation runs scaling and
/// squaring on `A·t`.
#[derive(Debug, Clone)]
pub enum Propagator {
    Spectral(EigenDecomp),
    Dense(Matrix),
}

impl Propagator {
    pub fn new(a: &Matrix) -> Result<Self> {
        check_square(a, "propagator")?;
        check_finite(a, "propagator matrix")?;
        Ok(match eig_real(a, DEFAULT_SEPARATION_TOL) {
            Ok(eig) if eig.condition() <= MAX_BASIS_CONDITION => Propagator::Spectral(eig),
            _ => Propagator::Dense(a.clone()),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Propagator::Spectral(e) => e.dim(),
            Propagator::Dense(a) => a.nrows(),
        }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, Propagator::Spectral(_))
    }

    pub fn at(&self, t: f64) -> Matrix {
        match self {
            Propagator::Spectral(e) => e.map_spectrum(|l| (l * t).exp()),
            Propagator::Dense(a) => expm_unchecked(&(a * t)),
        }
    }

    pub fn apply(&self, t: f64, x: &Vector) -> Vector {
        match self {
            Propagator::Spectral(e) => {
                let w = &e.q_inv * x;
                let scaled = DVector::from_fn(w.len(), |i, _| w[i] * (e.lambdas[i] * t).exp());
                &e.q * scaled
            }
            Propagator::Dense(a) => expm_unchecked(&(a * t)) * x,
        }
    }
}

/// Divided-difference matrix `U(t)`: `t·e^{λ_i t}` on the diagonal and
/// `(e^{λ_i t} − e^{λ_j t}) / (λ_i − λ_j)` off it.
pub fn divided_differences(lambdas: &Vector, t: f64) -> Matrix {
    let d = lambdas.len();
    let e: Vec<f64> = lambdas.iter().map(|l| (l * t).exp()).collect();
    Matrix::from_fn(d, d, |i, j| divided_difference(lambdas[i], lambdas[j], e[i], e[j], t))
}

/// One entry of `U(t)` given `e_i = e^{λ_i t}` and `e_j = e^{λ_j t}`.
/// Close eigenvalues go through `exp_m1` so the difference does not cancel.
#[inline]
pub(crate) fn divided_difference(li: f64, lj: f64, ei: f64, ej: f64, t: f64) -> f64 {
    let gap = li - lj;
    if gap == 0.0 {
        t * ei
    } else if (gap * t).abs() > 0.5 {
        (ei - ej) / gap
    } else {
        ej * (gap * t).exp_m1() / gap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn min_singular_values() {
        assert!((min_singular_value(&Matrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-15);
        assert!(min_singular_value(&dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap() <= 1e-12);
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 5.0]));
        assert!((min_singular_value(&d).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn propagator_paths_agree() {
        let a = dmatrix![1.76, 0.0, 0.98; 2.24, 0.0, -0.98; 0.95, 0.0, -0.1];
        let spectral = Propagator::new(&a).unwrap();
        assert!(spectral.is_spectral());
        let dense = Propagator::Dense(a.clone());
        for &t in &[0.0, 0.3, 1.0, 2.5] {
            let diff = (spectral.at(t) - dense.at(t)).norm() / dense.at(t).norm();
            assert!(diff < 1e-12, "t={t} diff={diff}");
        }
    }

    #[test]
    fn defective_matrix_falls_back_to_dense() {
        let a = dmatrix![1.0, 1.0; 0.0, 1.0];
        let p = Propagator::new(&a).unwrap();
        assert!(!p.is_spectral());
        let e = p.at(1.0);
        let want = dmatrix![1.0, 1.0; 0.0, 1.0] * 1f64.exp();
        assert!((e - want).abs().max() < 1e-14);
    }

    #[test]
    fn divided_differences_limit() {
        let l = DVector::from_vec(vec![0.5, 0.5 + 1e-12]);
        let u = divided_differences(&l, 2.0);
        let limit = 2.0 * (0.5f64 * 2.0).exp();
        assert!((u[(0, 1)] - limit).abs() < 1e-9);
        assert!((u[(1, 0)] - limit).abs() < 1e-9);
    }
}
