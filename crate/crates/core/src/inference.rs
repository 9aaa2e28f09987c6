//! Asymptotic covariance of the least-squares estimator and the tests built
//! on it: a simultaneous confidence region, pointwise intervals and
//! per-entry tests of `a_jk = 0`.
//!
//! `H = (2/T)∫₀ᵀ SᵀS dt` and `V = (4/T)∫₀ᵀ SᵀΣS dt` are integrated with
//! composite Simpson, where `S(θ, t)` is the Jacobian of `e^{At}x0` in `θ`.
//! The covariance of `√n (θ̂ − θ)` is `H⁻¹VH⁻¹`.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::degraded::{forward_params, g_gradient, DegradedSpec};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Propagator};
use crate::model::{ObservationSet, SystemParams, ThetaVec};
use crate::nls::trajectory_jacobian;
use crate::special::{chi2_quantile, normal_quantile};

pub const DEFAULT_PANELS: usize = 1024;

/// `d × (d + d²)` Jacobian of the trajectory at time `t`.
pub fn sensitivity(theta: &ThetaVec, t: f64) -> Result<Matrix> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time {t} must be finite and non-negative")));
    }
    let params = theta.unpack()?;
    let prop = Propagator::new(&params.a)?;
    Ok(trajectory_jacobian(&prop, &params, t))
}

fn check_quadrature(t_end: f64, panels: usize) -> Result<()> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Domain(format!("horizon {t_end} must be positive")));
    }
    if panels < 2 || panels % 2 != 0 {
        return Err(Error::Domain(format!("Simpson needs an even panel count >= 2, got {panels}")));
    }
    Ok(())
}

fn check_sigma(sigma: &[f64], d: usize) -> Result<()> {
    if sigma.len() != d {
        return Err(Error::Dimension(format!("{} noise variances for d = {d}", sigma.len())));
    }
    if !sigma.iter().all(|s| *s > 0.0 && s.is_finite()) {
        return Err(Error::Domain("noise variances must be positive".into()));
    }
    Ok(())
}

fn symmetrize(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

/// Relative change between successive panel doublings at which the
/// quadrature stops refining.
const QUADRATURE_RTOL: f64 = 1e-10;
const MAX_PANELS: usize = 1 << 20;

/// Integrands `SᵀS` and `SᵀΣS` accumulated over a set of nodes.
struct NodeSums {
    gram: Matrix,
    weighted: Matrix,
}

impl NodeSums {
    fn zeros(len: usize) -> Self {
        Self {
            gram: Matrix::zeros(len, len),
            weighted: Matrix::zeros(len, len),
        }
    }

    fn add(&mut self, s: &Matrix, sigma: Option<&[f64]>) {
        self.gram += s.tr_mul(s);
        if let Some(sig) = sigma {
            let mut scaled = s.clone();
            for (mut row, &v) in scaled.row_iter_mut().zip(sig) {
                row *= v;
            }
            self.weighted += s.tr_mul(&scaled);
        }
    }

    fn simpson(ends: &Self, odd: &Self, even: &Self, h: f64, t_end: f64) -> Self {
        let f = h / 3.0 / t_end;
        Self {
            gram: (&ends.gram + &odd.gram * 4.0 + &even.gram * 2.0) * f,
            weighted: (&ends.weighted + &odd.weighted * 4.0 + &even.weighted * 2.0) * f,
        }
    }
}

fn rel_change(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).abs().max() / b.abs().max().max(f64::MIN_POSITIVE)
}

/// Simpson sums of `SᵀS` and, when `sigma` is given, `SᵀΣS`, each divided
/// by `T`, together with the panel count used.
///
/// The panel count doubles (reusing every node) until both sums change by
/// less than `QUADRATURE_RTOL` relative; at least `panels` are used.
fn gram_integrals(
    params: &SystemParams,
    t_end: f64,
    sigma: Option<&[f64]>,
    panels: usize,
) -> Result<(Matrix, Option<Matrix>, usize)> {
    check_quadrature(t_end, panels)?;
    let d = params.dim();
    let len = d + d * d;
    let prop = Propagator::new(&params.a)?;
    let eval = |t: f64, acc: &mut NodeSums| acc.add(&trajectory_jacobian(&prop, params, t), sigma);

    let mut ends = NodeSums::zeros(len);
    eval(0.0, &mut ends);
    eval(t_end, &mut ends);
    // the first comparison is `panels / 2` against `panels` when both suit Simpson
    let mut n = if panels % 4 == 0 { panels / 2 } else { panels };
    let mut h = t_end / n as f64;
    let (mut odd, mut even) = (NodeSums::zeros(len), NodeSums::zeros(len));
    for m in 1..n {
        eval(m as f64 * h, if m % 2 == 1 { &mut odd } else { &mut even });
    }
    let mut current = NodeSums::simpson(&ends, &odd, &even, h, t_end);
    while n < MAX_PANELS {
        even.gram += &odd.gram;
        even.weighted += &odd.weighted;
        odd = NodeSums::zeros(len);
        for m in 0..n {
            eval((m as f64 + 0.5) * h, &mut odd);
        }
        n *= 2;
        h = t_end / n as f64;
        let refined = NodeSums::simpson(&ends, &odd, &even, h, t_end);
        let settled = rel_change(&current.gram, &refined.gram) < QUADRATURE_RTOL
            && (sigma.is_none() || rel_change(&current.weighted, &refined.weighted) < QUADRATURE_RTOL);
        current = refined;
        if settled {
            break;
        }
    }
    Ok((current.gram, sigma.map(|_| current.weighted), n))
}

/// `H(T, θ) = (2/T) ∫₀ᵀ SᵀS dt`.
pub fn h_matrix(theta: &ThetaVec, t_end: f64, panels: usize) -> Result<Matrix> {
    let (gram, _, _) = gram_integrals(&theta.unpack()?, t_end, None, panels)?;
    Ok(symmetrize(gram * 2.0))
}

/// `V(T, θ, Σ) = (4/T) ∫₀ᵀ SᵀΣS dt` for diagonal `Σ = diag(sigma)`.
pub fn v_matrix(theta: &ThetaVec, t_end: f64, sigma: &[f64], panels: usize) -> Result<Matrix> {
    let params = theta.unpack()?;
    check_sigma(sigma, params.dim())?;
    let (_, v, _) = gram_integrals(&params, t_end, Some(sigma), panels)?;
    Ok(symmetrize(v.expect("sigma supplied") * 4.0))
}

/// How the estimate whose covariance is wanted was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum CovariancePath {
    Original,
    /// Blocks of `k` out of `n` original samples.
    Aggregated { k: usize, n: usize },
    TimeScaled { k: f64 },
}

impl CovariancePath {
    /// Sample count the statistics scale with: `⌊n/k⌋` after aggregation.
    pub fn effective_n(&self, n: usize) -> usize {
        match *self {
            CovariancePath::Aggregated { k, .. } => n / k,
            _ => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    /// `H` on the path's own parameterization (`H̃` on degraded paths).
    pub h: Matrix,
    pub v: Matrix,
    /// Covariance of `√n (θ̂ − θ)` in the original parameterization.
    pub sigma_n: Matrix,
    pub path: CovariancePath,
    /// Upper integration limit actually used.
    pub t_effective: f64,
    pub theta_at: ThetaVec,
    pub sigma_used: Vec<f64>,
    pub quadrature_panels: usize,
}

fn cholesky(m: &Matrix, what: &'static str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

/// Sandwich covariance at `theta` (original parameterization) for data on
/// `[0, T]` with noise variances `sigma`.
///
/// Degraded paths integrate over the degraded system and clock, then map
/// back with the Jacobian `G` of `g`.
pub fn sandwich(
    theta: &ThetaVec,
    t_end: f64,
    sigma: &[f64],
    path: CovariancePath,
    panels: usize,
) -> Result<CovarianceReport> {
    let params = theta.unpack()?;
    check_sigma(sigma, params.dim())?;
    check_quadrature(t_end, panels)?;
    let (tilde, t_eff, v_div, g) = match path {
        CovariancePath::Original => (params.clone(), t_end, 1.0, None),
        CovariancePath::Aggregated { k, n } => {
            if k == 0 || n / k < 2 {
                return Err(Error::Config(format!("aggregating {n} samples by {k} leaves < 2")));
            }
            let spec = DegradedSpec::Aggregated {
                k,
                base_delta_t: t_end / (n - 1) as f64,
            };
            let tilde = forward_params(&params, &spec)?;
            let t_tilde = ((n / k - 1) * k) as f64 * t_end / (n - 1) as f64;
            let g = g_gradient(&tilde.pack(), &spec)?;
            (tilde, t_tilde, k as f64, Some(g))
        }
        CovariancePath::TimeScaled { k } => {
            let spec = DegradedSpec::time_scaled(k)?;
            let tilde = forward_params(&params, &spec)?;
            let g = g_gradient(&tilde.pack(), &spec)?;
            (tilde, k * t_end, 1.0, Some(g))
        }
    };
    let (gram, weighted, used) = gram_integrals(&tilde, t_eff, Some(sigma), panels)?;
    let h = symmetrize(gram * 2.0);
    let v = symmetrize(weighted.expect("sigma supplied") * (4.0 / v_div));

    let chol = cholesky(&h, "H")?;
    let hv = chol.solve(&v);
    let inner = chol.solve(&hv.transpose());
    let sigma_n = match &g {
        Some(g) => g * inner * g.transpose(),
        None => inner,
    };
    Ok(CovarianceReport {
        h,
        v,
        sigma_n: symmetrize(sigma_n),
        path,
        t_effective: t_eff,
        theta_at: theta.clone(),
        sigma_used: sigma.to_vec(),
        quadrature_panels: used,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} not in (0, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrTest {
    pub statistic: f64,
    pub critical: f64,
    pub inside: bool,
}

/// `n (θ̂ − θ)ᵀ Σ_n⁻¹ (θ̂ − θ)` against the `χ²_{d+d²}(1 − α)` quantile.
/// On degraded paths pass the degraded sample count.
pub fn cr_test(
    theta_hat: &ThetaVec,
    theta_ref: &ThetaVec,
    cov: &CovarianceReport,
    n: usize,
    alpha: f64,
) -> Result<CrTest> {
    check_alpha(alpha)?;
    let len = theta_hat.len();
    if theta_ref.len() != len || cov.sigma_n.nrows() != len {
        return Err(Error::Dimension("theta and covariance sizes differ".into()));
    }
    let diff = theta_hat.to_dvector() - theta_ref.to_dvector();
    let chol = cholesky(&cov.sigma_n, "sigma_n")?;
    let statistic = n as f64 * diff.dot(&chol.solve(&diff));
    let critical = chi2_quantile(len as u32, 1.0 - alpha)?;
    Ok(CrTest {
        statistic,
        critical,
        inside: statistic <= critical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervals {
    pub lower: ThetaVec,
    pub upper: ThetaVec,
    /// Some diagonal entry of `Σ_n` was negative and treated as zero.
    pub clamped: bool,
}

fn half_widths(cov: &CovarianceReport, n: usize, alpha: f64) -> Result<(Vec<f64>, bool)> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let mut clamped = false;
    let widths = cov
        .sigma_n
        .diagonal()
        .iter()
        .map(|&v| {
            if v < 0.0 {
                clamped = true;
            }
            z * (v.max(0.0) / n as f64).sqrt()
        })
        .collect();
    Ok((widths, clamped))
}

/// `θ̂_i ± z_{α/2} √(Σ_n[i,i] / n)`.
pub fn pointwise_cis(
    theta_hat: &ThetaVec,
    cov: &CovarianceReport,
    n: usize,
    alpha: f64,
) -> Result<Intervals> {
    let (w, clamped) = half_widths(cov, n, alpha)?;
    if w.len() != theta_hat.len() {
        return Err(Error::Dimension("theta and covariance sizes differ".into()));
    }
    Ok(Intervals {
        lower: theta_hat.map(|i, v| v - w[i]),
        upper: theta_hat.map(|i, v| v + w[i]),
        clamped,
    })
}

/// `rejections[j][k]` is true when `a_jk = 0` is rejected, i.e. when zero
/// lies outside the interval for `a_jk`.
pub fn edge_test(
    theta_hat: &ThetaVec,
    cov: &CovarianceReport,
    n: usize,
    alpha: f64,
) -> Result<Vec<Vec<bool>>> {
    let (w, _) = half_widths(cov, n, alpha)?;
    if w.len() != theta_hat.len() {
        return Err(Error::Dimension("theta and covariance sizes differ".into()));
    }
    let d = theta_hat.dim();
    Ok((0..d)
        .map(|j| {
            (0..d)
                .map(|k| {
                    let i = ThetaVec::a_index(d, j, k);
                    theta_hat[i].abs() > w[i]
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    /// Present when a reference parameter was supplied.
    pub cr: Option<CrTest>,
    pub cr_critical: f64,
    pub ci_lower: ThetaVec,
    pub ci_upper: ThetaVec,
    pub ci_clamped: bool,
    pub edge_rejections: Vec<Vec<bool>>,
    pub alpha: f64,
    pub n_used: usize,
}

/// Runs every test at once; `n` is the sample count the estimate used.
pub fn infer(
    theta_hat: &ThetaVec,
    theta_ref: Option<&ThetaVec>,
    cov: &CovarianceReport,
    n: usize,
    alpha: f64,
) -> Result<InferenceOutcome> {
    let cr = theta_ref
        .map(|r| cr_test(theta_hat, r, cov, n, alpha))
        .transpose()?;
    let ci = pointwise_cis(theta_hat, cov, n, alpha)?;
    Ok(InferenceOutcome {
        cr,
        cr_critical: chi2_quantile(theta_hat.len() as u32, 1.0 - alpha)?,
        ci_lower: ci.lower,
        ci_upper: ci.upper,
        ci_clamped: ci.clamped,
        edge_rejections: edge_test(theta_hat, cov, n, alpha)?,
        alpha,
        n_used: n,
    })
}

/// Per-coordinate mean squared residual at `theta`.
///
/// On aggregated data this estimates the variance of block means, which is
/// the original variance divided by `k`.
pub fn estimate_noise_variances(theta: &ThetaVec, obs: &ObservationSet) -> Result<Vec<f64>> {
    let params = theta.unpack()?;
    if params.dim() != obs.dim() {
        return Err(Error::Dimension("theta and observations differ in d".into()));
    }
    let prop = Propagator::new(&params.a)?;
    let d = obs.dim();
    let mut acc = vec![0.0; d];
    for i in 0..obs.n() {
        let r = prop.apply(obs.time(i), &params.x0) - obs.values().column(i);
        for j in 0..d {
            acc[j] += r[j] * r[j];
        }
    }
    let out: Vec<f64> = acc.iter().map(|v| v / obs.n() as f64).collect();
    if out.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("residual variance is zero; supply known variances".into()));
    }
    Ok(out)
}
