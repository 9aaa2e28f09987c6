//! Distribution functions used by the inference layer: `chi2_quantile` for
//! confidence regions and `normal_quantile` for intervals and edge tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability {p} not in (0, 1)")))
    }
}

fn chi2(dof: u32) -> Result<ChiSquared> {
    if !(1..=10_000).contains(&dof) {
        return Err(Error::Domain(format!("chi2 degrees of freedom {dof} not in 1..=10000")));
    }
    ChiSquared::new(dof as f64).map_err(|e| Error::Domain(e.to_string()))
}

pub fn chi2_cdf(dof: u32, x: f64) -> f64 {
    chi2(dof).map_or(f64::NAN, |d| d.cdf(x))
}

/// Quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_quantile(dof: u32, p: f64) -> Result<f64> {
    let dist = chi2(dof)?;
    check_probability(p)?;
    Ok(dist.inverse_cdf(p))
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Inverse of the standard normal CDF.
///
/// Computed on the lower half and reflected, so `q(p) = −q(1 − p)` holds
/// exactly whenever `1 − p` is exact.
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_probability(p)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    let lower = |p: f64| Normal::standard().inverse_cdf(p);
    Ok(if p > 0.5 { -lower(1.0 - p) } else { lower(p) })
}
