//! Least-squares objective `M_n(θ) = (1/n) Σ ‖y_i − e^{A t_i} x0‖²`, its
//! analytic gradient, the derivative of `e^{At}` in one entry of `A`, and a
//! box-constrained quasi-Newton fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{divided_difference, divided_differences, expm_frechet_block, EigenDecomp, Matrix, Propagator, Vector};
use crate::model::{ObservationSet, SystemParams, ThetaVec};

fn check_dims(theta: &ThetaVec, obs: &ObservationSet) -> Result<SystemParams> {
    let params = theta.unpack()?;
    if params.dim() != obs.dim() {
        return Err(Error::Dimension(format!(
            "theta is for d = {}, observations have d = {}",
            params.dim(),
            obs.dim()
        )));
    }
    Ok(params)
}

pub fn objective(theta: &ThetaVec, obs: &ObservationSet) -> Result<f64> {
    let params = check_dims(theta, obs)?;
    let prop = Propagator::new(&params.a)?;
    let y = obs.values();
    let mut sum = 0.0;
    for i in 0..obs.n() {
        let r = prop.apply(obs.time(i), &params.x0) - y.column(i);
        sum += r.norm_squared();
    }
    Ok(sum / obs.n() as f64)
}

/// `Q[(Q⁻¹_{·j} Q_{k·}) ∘ U(t)]Q⁻¹`.
fn dexpm_da_spectral(eig: &EigenDecomp, t: f64, j: usize, k: usize) -> Matrix {
    let d = eig.dim();
    let u = divided_differences(&eig.lambdas, t);
    let inner = Matrix::from_fn(d, d, |a, b| eig.q_inv[(a, j)] * eig.q[(k, b)] * u[(a, b)]);
    &eig.q * inner * &eig.q_inv
}

/// Upper-right block of `exp([[A, E_jk], [0, A]]·t)`.
fn dexpm_da_block(a: &Matrix, t: f64, j: usize, k: usize) -> Matrix {
    let d = a.nrows();
    let mut e = Matrix::zeros(d, d);
    e[(j, k)] = t;
    expm_frechet_block(&(a * t), &e).1
}

/// `∂e^{At}/∂a_jk` for 0-based `(j, k)`.
///
/// Closed form through the eigendecomposition when `A` has a well separated
/// real spectrum, otherwise the Fréchet derivative from a `2d × 2d` block
/// exponential.
pub fn dexpm_da(a: &Matrix, t: f64, j: usize, k: usize) -> Result<Matrix> {
    let d = a.nrows();
    if j >= d || k >= d {
        return Err(Error::Dimension(format!("entry ({j}, {k}) outside a {d}x{d} matrix")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time {t} must be finite and non-negative")));
    }
    Ok(match Propagator::new(a)? {
        Propagator::Spectral(eig) => dexpm_da_spectral(&eig, t, j, k),
        Propagator::Dense(_) => dexpm_da_block(a, t, j, k),
    })
}

/// Forces the block-exponential path of [`dexpm_da`]; used as a cross-check.
pub fn dexpm_da_fallback(a: &Matrix, t: f64, j: usize, k: usize) -> Matrix {
    dexpm_da_block(a, t, j, k)
}

/// Jacobian of `θ ↦ e^{At} x0` at one time: `d × (d + d²)` with columns in
/// packing order, `e^{At}` first and then `Z_jk(t) x0`.
pub(crate) fn trajectory_jacobian(prop: &Propagator, params: &SystemParams, t: f64) -> Matrix {
    let d = params.dim();
    let mut s = Matrix::zeros(d, d + d * d);
    match prop {
        Propagator::Spectral(eig) => {
            let e = eig.map_spectrum(|l| (l * t).exp());
            s.columns_mut(0, d).copy_from(&e);
            let w = &eig.q_inv * &params.x0;
            let u = divided_differences(&eig.lambdas, t);
            for k in 0..d {
                let qk_w = Vector::from_fn(d, |b, _| eig.q[(k, b)] * w[b]);
                let uv = &u * qk_w;
                for j in 0..d {
                    let inner = Vector::from_fn(d, |a, _| eig.q_inv[(a, j)] * uv[a]);
                    s.set_column(d + j * d + k, &(&eig.q * inner));
                }
            }
        }
        Propagator::Dense(a) => {
            s.columns_mut(0, d).copy_from(&prop.at(t));
            for j in 0..d {
                for k in 0..d {
                    let z = dexpm_da_block(a, t, j, k);
                    s.set_column(d + j * d + k, &(z * &params.x0));
                }
            }
        }
    }
    s
}

/// Objective and gradient sharing one decomposition of `A`.
pub fn objective_and_gradient(theta: &ThetaVec, obs: &ObservationSet) -> Result<(f64, ThetaVec)> {
    let params = check_dims(theta, obs)?;
    let d = params.dim();
    let n = obs.n();
    let y = obs.values();
    let mut sum = 0.0;
    let (gx0, ga) = match Propagator::new(&params.a)? {
        Propagator::Spectral(eig) => {
            let w = &eig.q_inv * &params.x0;
            let (q, lam) = (&eig.q, eig.lambdas.as_slice());
            let mut e = vec![0.0; d];
            let mut r = vec![0.0; d];
            let mut p = vec![0.0; d];
            let mut acc_x = Vector::zeros(d);
            let mut acc_a = Matrix::zeros(d, d);
            for i in 0..n {
                let t = obs.time(i);
                for a in 0..d {
                    e[a] = (lam[a] * t).exp();
                }
                for (row, r_row) in r.iter_mut().enumerate() {
                    let fit: f64 = (0..d).map(|a| q[(row, a)] * e[a] * w[a]).sum();
                    *r_row = fit - y[(row, i)];
                    sum += *r_row * *r_row;
                }
                for (a, p_a) in p.iter_mut().enumerate() {
                    *p_a = (0..d).map(|row| q[(row, a)] * r[row]).sum();
                    acc_x[a] += e[a] * *p_a;
                }
                // U is symmetric, so each off-diagonal pair shares one entry
                for a in 0..d {
                    acc_a[(a, a)] += t * e[a] * p[a] * w[a];
                    for b in a + 1..d {
                        let u = divided_difference(lam[a], lam[b], e[a], e[b], t);
                        acc_a[(a, b)] += u * p[a] * w[b];
                        acc_a[(b, a)] += u * p[b] * w[a];
                    }
                }
            }
            let qinv_t = eig.q_inv.transpose();
            (&qinv_t * acc_x, qinv_t * acc_a * eig.q.transpose())
        }
        Propagator::Dense(a) => {
            // Equally spaced grid: x_i = Φ^i x_s with Φ = e^{AΔt} and
            // x_s = e^{A t_0} x0. The adjoint μ_i = r_i + Φᵀ μ_{i+1} is swept
            // backwards, so the whole gradient costs two Fréchet derivatives.
            let dt = obs.delta_t();
            let t0 = obs.t_start();
            let phi = crate::linalg::expm_unchecked(&(&a * dt));
            let e0 = crate::linalg::expm_unchecked(&(&a * t0));
            let mut xs = Vec::with_capacity(n);
            xs.push(&e0 * &params.x0);
            for i in 1..n {
                xs.push(&phi * &xs[i - 1]);
            }
            let mut mu = Vector::zeros(d);
            let mut g_phi = Matrix::zeros(d, d);
            for i in (0..n).rev() {
                let r = &xs[i] - y.column(i);
                sum += r.norm_squared();
                mu = phi.tr_mul(&mu) + r;
                if i > 0 {
                    g_phi += &mu * xs[i - 1].transpose();
                }
            }
            let at = a.transpose();
            let (_, mut acc_a) = expm_frechet_block(&(&at * dt), &(g_phi * dt));
            if t0 != 0.0 {
                let (_, l0) = expm_frechet_block(&(&at * t0), &(&mu * params.x0.transpose() * t0));
                acc_a += l0;
            }
            (e0.tr_mul(&mu), acc_a)
        }
    };
    let scale = 2.0 / n as f64;
    let mut g = Vec::with_capacity(d + d * d);
    g.extend(gx0.iter().map(|v| v * scale));
    for j in 0..d {
        for k in 0..d {
            g.push(ga[(j, k)] * scale);
        }
    }
    Ok((sum / n as f64, ThetaVec::new(g)?))
}

pub fn gradient(theta: &ThetaVec, obs: &ObservationSet) -> Result<ThetaVec> {
    Ok(objective_and_gradient(theta, obs)?.1)
}

/// Box, starting point and stopping rules for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lower: ThetaVec,
    pub upper: ThetaVec,
    pub init: ThetaVec,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub step_tol: f64,
    /// The optimizer works in `θ / scale`; tolerances refer to those units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ThetaVec>,
}

pub const DEFAULT_GRAD_TOL: f64 = 1e-10;
pub const DEFAULT_STEP_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 500;
/// Half-width of the box used when no bounds are given.
pub const DEFAULT_HALFWIDTH: f64 = 10.0;

impl FitOptions {
    /// Box `center ± halfwidth` with `init` inside it.
    pub fn boxed(init: ThetaVec, center: &ThetaVec, halfwidth: f64) -> Self {
        Self {
            lower: center.map(|_, v| v - halfwidth),
            upper: center.map(|_, v| v + halfwidth),
            init,
            grad_tol: DEFAULT_GRAD_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            step_tol: DEFAULT_STEP_TOL,
            scale: None,
        }
    }

    /// `init ± 10`, a pragmatic default when no bounds are known.
    pub fn around(init: ThetaVec) -> Self {
        let center = init.clone();
        Self::boxed(init, &center, DEFAULT_HALFWIDTH)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.init.len();
        let shapes_ok = self.lower.len() == len
            && self.upper.len() == len
            && self.scale.as_ref().is_none_or(|s| s.len() == len);
        if !shapes_ok {
            return Err(Error::Config("bounds, init and scale must have equal length".into()));
        }
        for i in 0..len {
            let (l, x, u) = (self.lower[i], self.init[i], self.upper[i]);
            if !(l <= x && x <= u) {
                return Err(Error::Config(format!(
                    "component {i}: init {x} outside [{l}, {u}]"
                )));
            }
        }
        if let Some(s) = &self.scale {
            if !s.as_slice().iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Err(Error::Config("scale entries must be positive".into()));
            }
        }
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0) {
            return Err(Error::Config("grad_tol and step_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: ThetaVec,
    pub objective: f64,
    /// Sup-norm of the projected gradient, in optimizer units.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// 0-based indices sitting on a bound at the solution.
    pub active_bounds: Vec<usize>,
    /// Objective after every accepted line-search step, starting at the
    /// initial point. Final polishing steps are not recorded.
    pub objective_trace: Vec<f64>,
}

const MEMORY: usize = 40;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
const POLISH_STEPS: usize = 10;
const POLISH_FACTOR: f64 = 1e-3;
/// Relative objective increase tolerated while polishing (rounding level).
const POLISH_RISE: f64 = 1e-13;

fn clamp(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &u))| v.clamp(l, u))
        .collect()
}

/// Clamps into the box and moves coordinates within `tol` of a bound onto
/// it, so they count as active instead of producing sub-tolerance steps.
fn project(x: &[f64], lo: &[f64], hi: &[f64], tol: f64) -> Vec<f64> {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &u))| {
            let v = v.clamp(l, u);
            if v - l <= tol {
                l
            } else if u - v <= tol {
                u
            } else {
                v
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Projected limited-memory BFGS with an Armijo backtracking search along
/// the projected path.
///
/// Coordinates on a bound whose gradient points out of the box are held
/// fixed for the iteration; the two-loop recursion acts on the rest. A
/// direction that fails to descend resets the memory to steepest descent.
pub fn fit(obs: &ObservationSet, opts: &FitOptions) -> Result<EstimationResult> {
    opts.validate()?;
    if opts.init.dim() != obs.dim() {
        return Err(Error::Dimension("init does not match observation dimension".into()));
    }
    let len = opts.init.len();
    let scale: Vec<f64> = match &opts.scale {
        Some(s) => s.as_slice().to_vec(),
        None => vec![1.0; len],
    };
    let to_z = |v: &ThetaVec| -> Vec<f64> { v.as_slice().iter().zip(&scale).map(|(a, s)| a / s).collect() };
    let lo = to_z(&opts.lower);
    let hi = to_z(&opts.upper);

    let eval = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let theta = ThetaVec::new(z.iter().zip(&scale).map(|(a, s)| a * s).collect())?;
        let (f, g) = objective_and_gradient(&theta, obs)?;
        let gz: Vec<f64> = g.as_slice().iter().zip(&scale).map(|(a, s)| a * s).collect();
        Ok((f, gz))
    };
    let from_z = |z: &[f64]| ThetaVec::new(z.iter().zip(&scale).map(|(a, s)| a * s).collect());

    let mut x = project(&to_z(&opts.init), &lo, &hi, opts.step_tol);
    let (mut f, mut g) = eval(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { theta: from_z(&x)?.into_vec() });
    }
    let mut trace = vec![f];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let projected = |x: &[f64], g: &[f64]| -> Vec<f64> {
        let stepped: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        x.iter().zip(clamp(&stepped, &lo, &hi)).map(|(a, b)| a - b).collect()
    };

    while iterations < opts.max_iters {
        if sup_norm(&projected(&x, &g)) <= opts.grad_tol {
            converged = true;
            break;
        }
        let free: Vec<bool> = (0..len)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let masked = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(&free).map(|(a, &m)| if m { *a } else { 0.0 }).collect()
        };

        let mut dir = two_loop(&masked(&g), &s_hist, &y_hist, &masked);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = two_loop(&masked(&g), &s_hist, &y_hist, &masked);
            slope = dot(&g, &dir);
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        let mut tiny_step = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let x_new = project(&trial, &lo, &hi, opts.step_tol);
            let dx: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            if sup_norm(&dx) <= opts.step_tol {
                tiny_step = true;
                break;
            }
            let (f_new, g_new) = eval(&x_new)?;
            if f_new.is_finite()
                && g_new.iter().all(|v| v.is_finite())
                && f_new <= f + ARMIJO_C1 * dot(&g, &dx)
            {
                accepted = Some((x_new, dx, f_new, g_new));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((x_new, dx, f_new, g_new)) = accepted else {
            if !s_hist.is_empty() {
                // the secant model may be stale; retry along the gradient
                s_hist.clear();
                y_hist.clear();
                continue;
            }
            converged = tiny_step;
            if !tiny_step && !f.is_finite() {
                return Err(Error::NonFinite { theta: from_z(&x)?.into_vec() });
            }
            break;
        };
        let dg: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&dx, &dg);
        if sy > f64::EPSILON * dot(&dg, &dg).sqrt() * dot(&dx, &dx).sqrt() {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(dx.clone());
            y_hist.push(dg);
        }
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if sup_norm(&dx) <= opts.step_tol {
            converged = true;
            break;
        }
    }

    let mut pg = projected(&x, &g);
    if converged {
        // Near the optimum M_n stops resolving decrease, so finish with
        // Gauss-Newton steps accepted while the projected gradient shrinks.
        // The matrix is formed once; near the optimum it barely changes.
        let mut normal: Option<Matrix> = None;
        for _ in 0..POLISH_STEPS {
            let norm = sup_norm(&pg);
            if norm <= POLISH_FACTOR * opts.grad_tol || iterations >= opts.max_iters {
                break;
            }
            let free: Vec<bool> = (0..len)
                .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
                .collect();
            if normal.is_none() {
                normal = Some(gauss_newton_matrix(&from_z(&x)?, obs, &scale)?);
            }
            let Some(dir) = normal.as_ref().and_then(|m| gauss_newton_step(m, &g, &free)) else {
                break;
            };
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b).collect();
            let x_new = project(&trial, &lo, &hi, opts.step_tol);
            let (f_new, g_new) = eval(&x_new)?;
            let pg_new = projected(&x_new, &g_new);
            let flat = f_new <= f + POLISH_RISE * f.abs();
            if !(flat && g_new.iter().all(|v| v.is_finite()) && sup_norm(&pg_new) < 0.5 * norm) {
                break;
            }
            iterations += 1;
            x = x_new;
            f = f_new;
            g = g_new;
            pg = pg_new;
        }
    }
    let grad_norm = sup_norm(&pg);
    if grad_norm <= opts.grad_tol {
        converged = true;
    }
    let active_bounds = (0..len).filter(|&i| x[i] <= lo[i] || x[i] >= hi[i]).collect();
    Ok(EstimationResult {
        theta_hat: from_z(&x)?,
        objective: f,
        grad_norm,
        iterations,
        converged,
        active_bounds,
        objective_trace: trace,
    })
}

/// `(2/n) Σ SᵢᵀSᵢ` in optimizer units, the Gauss-Newton approximation of
/// the Hessian of `M_n`.
fn gauss_newton_matrix(theta: &ThetaVec, obs: &ObservationSet, scale: &[f64]) -> Result<Matrix> {
    let params = theta.unpack()?;
    let prop = Propagator::new(&params.a)?;
    let len = scale.len();
    let mut normal = Matrix::zeros(len, len);
    for i in 0..obs.n() {
        let s = trajectory_jacobian(&prop, &params, obs.time(i));
        normal.gemm_tr(1.0, &s, &s, 1.0);
    }
    let factor = 2.0 / obs.n() as f64;
    Ok(Matrix::from_fn(len, len, |r, c| normal[(r, c)] * scale[r] * scale[c] * factor))
}

/// `−N⁻¹ g` restricted to the free coordinates; `None` when that block of
/// `N` is not positive definite.
fn gauss_newton_step(normal: &Matrix, g: &[f64], free: &[bool]) -> Option<Vec<f64>> {
    let idx: Vec<usize> = (0..g.len()).filter(|&i| free[i]).collect();
    let block = Matrix::from_fn(idx.len(), idx.len(), |r, c| normal[(idx[r], idx[c])]);
    let rhs = Vector::from_iterator(idx.len(), idx.iter().map(|&i| -g[i]));
    let sol = block.cholesky()?.solve(&rhs);
    let mut dir = vec![0.0; g.len()];
    for (c, &i) in idx.iter().enumerate() {
        dir[i] = sol[c];
    }
    Some(dir)
}

/// `−H g` for the L-BFGS inverse Hessian built from `(s, y)` pairs
/// restricted to the free coordinates.
fn two_loop(
    g: &[f64],
    s_hist: &[Vec<f64>],
    y_hist: &[Vec<f64>],
    masked: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let m = s_hist.len();
    let mut q = g.to_vec();
    let s_m: Vec<Vec<f64>> = s_hist.iter().map(|s| masked(s)).collect();
    let y_m: Vec<Vec<f64>> = y_hist.iter().map(|y| masked(y)).collect();
    let mut alphas = vec![0.0; m];
    let mut rhos = vec![0.0; m];
    for i in (0..m).rev() {
        let sy = dot(&s_m[i], &y_m[i]);
        if sy <= 0.0 {
            continue;
        }
        rhos[i] = 1.0 / sy;
        alphas[i] = rhos[i] * dot(&s_m[i], &q);
        for (qv, yv) in q.iter_mut().zip(&y_m[i]) {
            *qv -= alphas[i] * yv;
        }
    }
    let gamma = match (0..m).rev().find(|&i| rhos[i] > 0.0) {
        Some(i) => dot(&s_m[i], &y_m[i]) / dot(&y_m[i], &y_m[i]),
        None => 1.0 / sup_norm(g).max(1.0),
    };
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for i in 0..m {
        if rhos[i] == 0.0 {
            continue;
        }
        let beta = rhos[i] * dot(&y_m[i], &q);
        for (qv, sv) in q.iter_mut().zip(&s_m[i]) {
            *qv += (alphas[i] - beta) * sv;
        }
    }
    q.iter().map(|v| -v).collect()
}
