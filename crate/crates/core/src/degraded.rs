//! Aggregated and time-scaled observations, the parameters of the system
//! they follow, and the map `g` (with its Jacobian) from degraded-system
//! parameters back to the original ones.
//!
//! Aggregated samples are stamped with the time of the first sample in their
//! block. Stamping at the block midpoint would change the induced initial
//! condition, so the choice matters for every formula here.

use nalgebra::linalg::LU;
use nalgebra::Dyn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{singular_values, Matrix, Propagator};
use crate::model::{ObsLabel, ObservationSet, SystemParams, ThetaVec};
use crate::nls::dexpm_da_fallback;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DegradedSpec {
    /// Means of `k` consecutive samples of a grid with spacing `base_delta_t`.
    Aggregated { k: usize, base_delta_t: f64 },
    /// Clock dilated by `k`.
    TimeScaled { k: f64 },
}

impl DegradedSpec {
    pub fn aggregated(k: usize, base_delta_t: f64) -> Result<Self> {
        let spec = DegradedSpec::Aggregated { k, base_delta_t };
        spec.validate()?;
        Ok(spec)
    }

    pub fn time_scaled(k: f64) -> Result<Self> {
        let spec = DegradedSpec::TimeScaled { k };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradedSpec::Aggregated { k, base_delta_t } => {
                if k < 2 {
                    return Err(Error::Config(format!("aggregation factor must be >= 2, got {k}")));
                }
                if !(base_delta_t > 0.0 && base_delta_t.is_finite()) {
                    return Err(Error::Config(format!("base spacing {base_delta_t} must be positive")));
                }
            }
            DegradedSpec::TimeScaled { k } => {
                if !(k > 0.0 && k.is_finite()) {
                    return Err(Error::Config(format!("time scale must be positive, got {k}")));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> ObsLabel {
        match *self {
            DegradedSpec::Aggregated { k, .. } => ObsLabel::Aggregated(k),
            DegradedSpec::TimeScaled { k } => ObsLabel::TimeScaled(k),
        }
    }
}

/// Block means of `k` consecutive samples; the remainder `n mod k` is dropped.
pub fn aggregate(obs: &ObservationSet, k: usize) -> Result<ObservationSet> {
    if k == 0 || k > obs.n() {
        return Err(Error::InvalidObservations(format!(
            "cannot aggregate {} samples in blocks of {k}",
            obs.n()
        )));
    }
    let n_tilde = obs.n() / k;
    let y = obs.values();
    let mut out = Matrix::zeros(obs.dim(), n_tilde);
    for j in 0..n_tilde {
        let block = y.columns(j * k, k);
        out.set_column(j, &(block.column_sum() / k as f64));
    }
    ObservationSet::new(
        obs.t_start(),
        k as f64 * obs.delta_t(),
        out,
        ObsLabel::Aggregated(k),
    )
}

/// Same samples on the clock `t̃ = k·t`.
pub fn time_scale(obs: &ObservationSet, k: f64) -> Result<ObservationSet> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Domain(format!("time scale must be positive, got {k}")));
    }
    Ok(obs.dilated(k, ObsLabel::TimeScaled(k)))
}

/// `Σ_{l<k} e^{A·l·Δt}`.
fn propagator_sum(a: &Matrix, k: usize, delta_t: f64) -> Result<Matrix> {
    let prop = Propagator::new(a)?;
    let d = a.nrows();
    let mut sum = Matrix::identity(d, d);
    for l in 1..k {
        sum += prop.at(l as f64 * delta_t);
    }
    Ok(sum)
}

/// Parameters of the system the degraded observations follow.
pub fn forward_params(params: &SystemParams, spec: &DegradedSpec) -> Result<SystemParams> {
    match *spec {
        DegradedSpec::Aggregated { k, base_delta_t } => {
            let sum = propagator_sum(&params.a, k, base_delta_t)?;
            SystemParams::new(sum * &params.x0 / k as f64, params.a.clone())
        }
        DegradedSpec::TimeScaled { k } => SystemParams::new(params.x0.clone(), &params.a / k),
    }
}

const SUM_RANK_REL: f64 = 1e-12;

fn checked_sum(a: &Matrix, k: usize, delta_t: f64) -> Result<LU<f64, Dyn, Dyn>> {
    let sum = propagator_sum(a, k, delta_t)?;
    let s = singular_values(&sum);
    if !(s[s.len() - 1] > SUM_RANK_REL * s[0]) {
        return Err(Error::SingularAggregationSum);
    }
    Ok(sum.lu())
}

/// Maps degraded-system parameters back to the original system.
pub fn g_map(theta_tilde: &ThetaVec, spec: &DegradedSpec) -> Result<ThetaVec> {
    let p = theta_tilde.unpack()?;
    let back = match *spec {
        DegradedSpec::Aggregated { k, base_delta_t } => {
            let lu = checked_sum(&p.a, k, base_delta_t)?;
            let x0 = lu.solve(&p.x0).ok_or(Error::SingularAggregationSum)? * k as f64;
            SystemParams::new(x0, p.a)?
        }
        DegradedSpec::TimeScaled { k } => SystemParams::new(p.x0, p.a * k)?,
    };
    Ok(back.pack())
}

/// Jacobian of [`g_map`] at `theta_tilde`, rows and columns in packing order.
///
/// For aggregation the `x0` rows are `k·S⁻¹` in the `x̃0` columns and
/// `−k·S⁻¹ (Σ_l Z_pq(lΔt)) S⁻¹ x̃0` in the `ã_pq` columns, with each `Z_pq`
/// taken from a block exponential so that nearly degenerate spectra are safe.
pub fn g_gradient(theta_tilde: &ThetaVec, spec: &DegradedSpec) -> Result<Matrix> {
    aggregated_gradient(theta_tilde, spec, |a, t, p, q| Ok(dexpm_da_fallback(a, t, p, q)))
}

/// [`g_gradient`] with `Z_pq` from the eigendecomposition; a cross-check
/// that fails when `Ã` has no well separated real spectrum.
pub fn g_gradient_spectral(theta_tilde: &ThetaVec, spec: &DegradedSpec) -> Result<Matrix> {
    aggregated_gradient(theta_tilde, spec, |a, t, p, q| {
        if !Propagator::new(a)?.is_spectral() {
            return Err(Error::NearDegenerate { min_separation: 0.0 });
        }
        crate::nls::dexpm_da(a, t, p, q)
    })
}

fn aggregated_gradient(
    theta_tilde: &ThetaVec,
    spec: &DegradedSpec,
    z: impl Fn(&Matrix, f64, usize, usize) -> Result<Matrix>,
) -> Result<Matrix> {
    let p = theta_tilde.unpack()?;
    let d = p.dim();
    let len = d + d * d;
    let mut g = Matrix::identity(len, len);
    match *spec {
        DegradedSpec::TimeScaled { k } => {
            for i in d..len {
                g[(i, i)] = k;
            }
        }
        DegradedSpec::Aggregated { k, base_delta_t } => {
            let lu = checked_sum(&p.a, k, base_delta_t)?;
            let kf = k as f64;
            let s_inv = lu.try_inverse().ok_or(Error::SingularAggregationSum)?;
            g.view_mut((0, 0), (d, d)).copy_from(&(&s_inv * kf));
            let v = &s_inv * &p.x0;
            for pp in 0..d {
                for q in 0..d {
                    let mut dsum = Matrix::zeros(d, d);
                    for l in 1..k {
                        dsum += z(&p.a, l as f64 * base_delta_t, pp, q)?;
                    }
                    let col = -(&s_inv * (dsum * &v)) * kf;
                    g.view_mut((0, d + pp * d + q), (d, 1)).copy_from(&col);
                }
            }
        }
    }
    Ok(g)
}
