//! System parameterization, the packed parameter vector, trajectories and
//! simulated noisy observations on an equally spaced grid.

use std::fmt;
use std::io::{Read, Write};

use nalgebra::DVector;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Propagator, Vector};
use crate::special::normal_quantile;

/// Initial condition and drift matrix of `ẋ = A x`, `x(0) = x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub x0: Vector,
    pub a: Matrix,
}

impl SystemParams {
    pub fn new(x0: Vector, a: Matrix) -> Result<Self> {
        let d = x0.len();
        if d == 0 || a.nrows() != d || a.ncols() != d {
            return Err(Error::Dimension(format!(
                "x0 has length {d} but A is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !x0.iter().chain(a.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteInput("system parameters"));
        }
        Ok(Self { x0, a })
    }

    /// Builds parameters from `x0` and row-major rows of `A`.
    pub fn from_rows(x0: &[f64], rows: &[&[f64]]) -> Result<Self> {
        let d = x0.len();
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("A must be d x d".into()));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(
            DVector::from_column_slice(x0),
            Matrix::from_row_slice(d, d, &flat),
        )
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn pack(&self) -> ThetaVec {
        ThetaVec::pack(self)
    }
}

/// Flat parameter vector of length `d + d²`: `x0` first, then `A` row-major,
/// so `a_jk` (1-based) sits at 1-based position `d + (j−1)d + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThetaVec(Vec<f64>);

impl ThetaVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        dim_from_len(values.len())?;
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d + d * d])
    }

    pub fn pack(params: &SystemParams) -> Self {
        let d = params.dim();
        let mut v = Vec::with_capacity(d + d * d);
        v.extend(params.x0.iter().copied());
        for j in 0..d {
            for k in 0..d {
                v.push(params.a[(j, k)]);
            }
        }
        Self(v)
    }

    pub fn unpack(&self) -> Result<SystemParams> {
        let d = self.dim();
        let x0 = DVector::from_column_slice(&self.0[..d]);
        let a = Matrix::from_row_slice(d, d, &self.0[d..]);
        SystemParams::new(x0, a)
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        dim_from_len(self.0.len()).expect("length validated on construction")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 0-based position of `a_jk` for 0-based `(j, k)`.
    pub fn a_index(d: usize, j: usize, k: usize) -> usize {
        d + j * d + k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn to_dvector(&self) -> Vector {
        DVector::from_column_slice(&self.0)
    }

    pub fn from_dvector(v: &Vector) -> Result<Self> {
        Self::new(v.iter().copied().collect())
    }

    /// Applies `f` entrywise, keeping the shape.
    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        Self(self.0.iter().enumerate().map(|(i, &v)| f(i, v)).collect())
    }
}

impl std::ops::Index<usize> for ThetaVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ThetaVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Recovers `d` from `d + d²`.
pub fn dim_from_len(len: usize) -> Result<usize> {
    let d = (((1.0 + 4.0 * len as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if d == 0 || d + d * d != len {
        return Err(Error::ThetaShape { len });
    }
    Ok(d)
}

/// Provenance of an observation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "snake_case")]
pub enum ObsLabel {
    NoiseFree,
    Noisy,
    Aggregated(usize),
    TimeScaled(f64),
}

impl fmt::Display for ObsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObsLabel::NoiseFree => write!(f, "noise_free"),
            ObsLabel::Noisy => write!(f, "noisy"),
            ObsLabel::Aggregated(k) => write!(f, "aggregated({k})"),
            ObsLabel::TimeScaled(k) => write!(f, "time_scaled({k})"),
        }
    }
}

/// States observed on the grid `t_i = t_start + i·delta_t`, `i = 0..n`.
///
/// Times are never stored per column; the grid is implied by
/// `(t_start, delta_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    t_start: f64,
    delta_t: f64,
    t_end: f64,
    values: Matrix,
    pub label: ObsLabel,
}

impl ObservationSet {
    pub fn new(t_start: f64, delta_t: f64, values: Matrix, label: ObsLabel) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::InvalidObservations("need at least one observation".into()));
        }
        if !(delta_t > 0.0 && delta_t.is_finite()) || !t_start.is_finite() {
            return Err(Error::InvalidObservations(format!(
                "grid start {t_start} / spacing {delta_t} invalid"
            )));
        }
        let t_end = t_start + (values.ncols() - 1) as f64 * delta_t;
        if !t_end.is_finite() {
            return Err(Error::InvalidObservations("grid end is not finite".into()));
        }
        Ok(Self {
            t_start,
            delta_t,
            t_end,
            values,
            label,
        })
    }

    /// Grid from `t_start` to `t_end` inclusive; both endpoints are kept exactly.
    pub fn on_span(t_start: f64, t_end: f64, values: Matrix, label: ObsLabel) -> Result<Self> {
        let n = values.ncols();
        if n < 2 || !(t_end > t_start) {
            return Err(Error::InvalidObservations(format!(
                "span [{t_start}, {t_end}] with {n} samples is not a grid"
            )));
        }
        let mut obs = Self::new(t_start, (t_end - t_start) / (n - 1) as f64, values, label)?;
        obs.t_end = t_end;
        Ok(obs)
    }

    /// Same samples on the grid dilated by `k`, endpoints scaled exactly.
    pub(crate) fn dilated(&self, k: f64, label: ObsLabel) -> Self {
        Self {
            t_start: self.t_start * k,
            delta_t: self.delta_t * k,
            t_end: self.t_end * k,
            values: self.values.clone(),
            label,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.n() {
            self.t_end
        } else {
            self.t_start + i as f64 * self.delta_t
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.time(i)).collect()
    }

    /// `d × n`, column `i` observed at `time(i)`.
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn with_label(mut self, label: ObsLabel) -> Self {
        self.label = label;
        self
    }

    /// Writes `t,x1,...,xd` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![format!("{:.16e}", self.time(i))];
            row.extend(self.values.column(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Reads the CSV layout produced by [`write_csv`](Self::write_csv) and
    /// checks that the time column is equally spaced to 1e-12 relative.
    pub fn read_csv<R: Read>(reader: R, label: ObsLabel) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let d = headers.len().saturating_sub(1);
        if d == 0 || &headers[0] != "t" {
            return Err(Error::InvalidObservations(
                "expected header `t,x1,...,xd`".into(),
            ));
        }
        for (j, h) in headers.iter().skip(1).enumerate() {
            if h != format!("x{}", j + 1) {
                return Err(Error::InvalidObservations(format!(
                    "unexpected column `{h}`, wanted `x{}`",
                    j + 1
                )));
            }
        }
        let mut times = Vec::new();
        let mut flat = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidObservations(format!("row {}: cannot parse `{s}`", line + 1))
                })
            };
            times.push(parse(&record[0])?);
            for j in 1..=d {
                flat.push(parse(&record[j])?);
            }
        }
        let n = times.len();
        if n == 0 {
            return Err(Error::InvalidObservations("no rows".into()));
        }
        let t_start = times[0];
        let delta_t = if n > 1 {
            (times[n - 1] - t_start) / (n - 1) as f64
        } else {
            1.0
        };
        if n > 1 && !(delta_t > 0.0) {
            return Err(Error::InvalidObservations("time column must increase".into()));
        }
        for (i, &t) in times.iter().enumerate() {
            let expected = t_start + i as f64 * delta_t;
            let scale = expected.abs().max(times[n - 1].abs()).max(1e-300);
            if (t - expected).abs() > 1e-12 * scale {
                return Err(Error::InvalidObservations(format!(
                    "row {}: time {t} is off the equally spaced grid (expected {expected})",
                    i + 1
                )));
            }
        }
        let values = Matrix::from_column_slice(d, n, &flat);
        if n > 1 {
            Self::on_span(t_start, times[n - 1], values, label)
        } else {
            Self::new(t_start, delta_t, values, label)
        }
    }
}

/// Diagonal Gaussian measurement noise with a seed for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    sigmas: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigmas: Vec<f64>, seed: u64) -> Result<Self> {
        if sigmas.is_empty() || !sigmas.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::Domain("noise standard deviations must lie in (0, inf)".into()));
        }
        Ok(Self { sigmas, seed })
    }

    pub fn isotropic(d: usize, sigma: f64, seed: u64) -> Result<Self> {
        Self::new(vec![sigma; d], seed)
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn variances(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| s * s).collect()
    }
}

/// Measurement noise for [`simulate_observations`]; `Free` yields exact samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    Free,
    Gaussian(NoiseSpec),
}

/// Reproducible stream of standard normal deviates.
///
/// ChaCha8 seeded with `seed_from_u64`; each 64-bit output `u` becomes
/// `((u >> 11) + 0.5) · 2⁻⁵³ ∈ (0, 1)` and is mapped through
/// [`normal_quantile`].
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_standard(&mut self) -> f64 {
        normal_quantile(self.next_uniform()).expect("uniform lies strictly inside (0, 1)")
    }
}

/// `d × |times|` matrix whose column `i` is `e^{A·times[i]} x0`.
pub fn trajectory(params: &SystemParams, times: &[f64]) -> Result<Matrix> {
    if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::Domain(format!("time {t} must be finite and non-negative")));
    }
    let prop = Propagator::new(&params.a)?;
    Ok(trajectory_with(&prop, &params.x0, times))
}

pub(crate) fn trajectory_with(prop: &Propagator, x0: &Vector, times: &[f64]) -> Matrix {
    let d = x0.len();
    let mut out = Matrix::zeros(d, times.len());
    for (i, &t) in times.iter().enumerate() {
        out.set_column(i, &prop.apply(t, x0));
    }
    out
}

/// Samples `n` points on `t_i = i·T/(n−1)` and adds i.i.d. `N(0, diag(σ²))`
/// noise, drawn observation by observation and coordinate by coordinate.
pub fn simulate_observations(
    params: &SystemParams,
    n: usize,
    t_end: f64,
    noise: &Noise,
) -> Result<ObservationSet> {
    if n < 2 {
        return Err(Error::Domain(format!("need n >= 2 samples, got {n}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Domain(format!("horizon T = {t_end} must be positive")));
    }
    let d = params.dim();
    let delta_t = t_end / (n - 1) as f64;
    let times: Vec<f64> = (0..n)
        .map(|i| if i == n - 1 { t_end } else { i as f64 * delta_t })
        .collect();
    let mut values = trajectory(params, &times)?;
    let label = match noise {
        Noise::Free => ObsLabel::NoiseFree,
        Noise::Gaussian(spec) => {
            if spec.sigmas().len() != d {
                return Err(Error::Dimension(format!(
                    "noise has {} coordinates, system has {d}",
                    spec.sigmas().len()
                )));
            }
            let mut stream = GaussianStream::new(spec.seed);
            for i in 0..n {
                for j in 0..d {
                    values[(j, i)] += spec.sigmas()[j] * stream.next_standard();
                }
            }
            ObsLabel::Noisy
        }
    };
    ObservationSet::on_span(0.0, t_end, values, label)
}
