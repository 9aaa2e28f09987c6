//! Conditions under which `(x0, A)` is determined by `d + 1` equally spaced
//! noise-free samples, and the closed-form recovery that realizes it.
//!
//! The report is meant for simulated or otherwise known systems and for
//! post-fit diagnostics at an estimate; on real data the true parameters are
//! unknown, so the conditions cannot be checked there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_real, expm, logm_real, singular_values, Matrix, DEFAULT_SEPARATION_TOL};
use crate::model::{ObservationSet, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSet {
    /// Krylov rank test: `σ_min > rank_rel · σ_max`.
    pub rank_rel: f64,
    /// Relative eigenvalue separation passed to [`eig_real`].
    pub separation: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        Self {
            rank_rel: 1e-10,
            separation: DEFAULT_SEPARATION_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "min_separation", rename_all = "snake_case")]
pub enum SpectrumDetail {
    Ok,
    Complex,
    Repeated(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    /// `x0, Ax0, …, A^{d−1}x0` linearly independent.
    pub a1_holds: bool,
    pub a1_min_singular: f64,
    /// `A` has `d` distinct real eigenvalues.
    pub a2_holds: bool,
    pub a2_detail: SpectrumDetail,
    pub verdict: bool,
}

/// Columns `x0, Ax0, …, A^{d−1}x0`.
pub fn krylov_matrix(params: &SystemParams) -> Matrix {
    let d = params.dim();
    let mut k = Matrix::zeros(d, d);
    let mut col = params.x0.clone();
    for j in 0..d {
        if j > 0 {
            col = &params.a * col;
        }
        k.set_column(j, &col);
    }
    k
}

pub fn check_identifiable(params: &SystemParams, tol: &ToleranceSet) -> IdentifiabilityReport {
    let s = singular_values(&krylov_matrix(params));
    let (s_max, s_min) = (s[0], s[s.len() - 1]);
    let a1_holds = s_max > 0.0 && s_min > tol.rank_rel * s_max;

    let a2_detail = match eig_real(&params.a, tol.separation) {
        Ok(_) => SpectrumDetail::Ok,
        Err(Error::NearDegenerate { min_separation }) => SpectrumDetail::Repeated(min_separation),
        Err(_) => SpectrumDetail::Complex,
    };
    let a2_holds = a2_detail == SpectrumDetail::Ok;
    IdentifiabilityReport {
        a1_holds,
        a1_min_singular: s_min,
        a2_holds,
        a2_detail,
        verdict: a1_holds && a2_holds,
    }
}

/// Recovers `(x0, A)` from the first `d + 1` columns of a noise-free
/// observation set: `Φ = X₂X₁⁻¹`, `A = log(Φ)/Δt`, `x0 = e^{−A t₁} x₁`.
///
/// Fails with [`Error::SingularWindow`] when `X₁` is numerically singular,
/// and propagates spectrum errors when `Φ` has no real logarithm.
pub fn recover_exact(obs: &ObservationSet, tol: &ToleranceSet) -> Result<SystemParams> {
    let d = obs.dim();
    if obs.n() < d + 1 {
        return Err(Error::InvalidObservations(format!(
            "exact recovery needs {} samples, got {}",
            d + 1,
            obs.n()
        )));
    }
    let y = obs.values();
    let x1 = y.columns(0, d).into_owned();
    let x2 = y.columns(1, d).into_owned();

    let s = singular_values(&x1);
    let sigma_min = s[d - 1];
    if !(sigma_min > tol.rank_rel * s[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularWindow { sigma_min });
    }
    // Φ X₁ = X₂  ⇔  X₁ᵀ Φᵀ = X₂ᵀ
    let phi = x1
        .transpose()
        .lu()
        .solve(&x2.transpose())
        .ok_or(Error::SingularWindow { sigma_min })?
        .transpose();
    let a = logm_real(&phi)? / obs.delta_t();
    let first = y.column(0).into_owned();
    let x0 = if obs.t_start() == 0.0 {
        first
    } else {
        expm(&(&a * -obs.t_start()))? * first
    };
    SystemParams::new(x0, a)
}
