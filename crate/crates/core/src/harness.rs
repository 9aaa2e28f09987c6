//! Monte-Carlo replication sweeps: simulate, optionally degrade, fit from a
//! warm start inside a box around the truth, then score the estimate.
//!
//! Per sample size the summary reports the mean squared error, the share of
//! replications whose true parameter lies inside the confidence region, and
//! per-entry rejection rates of `a_jk = 0` (type I at true zeros, type II at
//! true non-zeros). Fits that do not converge are excluded and counted.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degraded::{aggregate, forward_params, g_map, time_scale, DegradedSpec};
use crate::error::{Error, Result};
use crate::inference::{cr_test, edge_test, sandwich, CovariancePath, CovarianceReport, DEFAULT_PANELS};
use crate::model::{simulate_observations, Noise, NoiseSpec, SystemParams, ThetaVec};
use crate::nls::{fit, FitOptions, DEFAULT_GRAD_TOL, DEFAULT_STEP_TOL};

/// Sample sizes of the simulation study.
pub const STUDY_SAMPLE_SIZES: [usize; 5] = [100, 200, 500, 1000, 2000];

/// Systems used in the simulation study, plus user-supplied ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    D2,
    D3,
    D4,
    Custom { x0: Vec<f64>, a: Vec<Vec<f64>> },
}

impl Preset {
    pub fn params(&self) -> Result<SystemParams> {
        match self {
            Preset::D2 => SystemParams::from_rows(&[1.87, -0.98], &[&[1.76, -0.1], &[0.98, 0.0]]),
            Preset::D3 => SystemParams::from_rows(
                &[0.41, 0.14, 1.45],
                &[&[1.76, 0.0, 0.98], &[2.24, 0.0, -0.98], &[0.95, 0.0, -0.1]],
            ),
            Preset::D4 => SystemParams::from_rows(
                &[-0.42, 1.01, 1.97, -0.38],
                &[
                    &[1.76, 0.9, 0.0, 2.24],
                    &[1.87, -0.98, 0.0, -1.15],
                    &[-1.1, 0.0, 0.64, 0.0],
                    &[1.26, 0.12, 0.94, 0.0],
                ],
            ),
            Preset::Custom { x0, a } => {
                let rows: Vec<&[f64]> = a.iter().map(|r| r.as_slice()).collect();
                SystemParams::from_rows(x0, &rows)
            }
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d2" => Ok(Preset::D2),
            "d3" => Ok(Preset::D3),
            "d4" => Ok(Preset::D4),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

pub fn preset_params(name: &str) -> Result<SystemParams> {
    name.parse::<Preset>()?.params()
}

/// Degradation applied to every replication; the base spacing follows from
/// `n` and `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DegradeMode {
    Aggregated { k: usize },
    TimeScaled { k: f64 },
}

impl FromStr for DegradeMode {
    type Err = Error;

    /// `aggregated:<k>` or `timescale:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected aggregated:<k> or timescale:<k>, got `{s}`"));
        let (mode, k) = s.split_once(':').ok_or_else(bad)?;
        match mode {
            "aggregated" => {
                let k: usize = k.parse().map_err(|_| bad())?;
                if k < 2 {
                    return Err(Error::Config(format!("aggregation factor must be >= 2, got {k}")));
                }
                Ok(DegradeMode::Aggregated { k })
            }
            "timescale" | "time_scaled" => {
                let k: f64 = k.parse().map_err(|_| bad())?;
                if !(k > 0.0 && k.is_finite()) {
                    return Err(Error::Config(format!("time scale must be positive, got {k}")));
                }
                Ok(DegradeMode::TimeScaled { k })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for DegradeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegradeMode::Aggregated { k } => write!(f, "aggregated:{k}"),
            DegradeMode::TimeScaled { k } => write!(f, "timescale:{k}"),
        }
    }
}

impl DegradeMode {
    pub fn spec(&self, base_delta_t: f64) -> DegradedSpec {
        match *self {
            DegradeMode::Aggregated { k } => DegradedSpec::Aggregated { k, base_delta_t },
            DegradeMode::TimeScaled { k } => DegradedSpec::TimeScaled { k },
        }
    }

    pub fn covariance_path(&self, n: usize) -> CovariancePath {
        match *self {
            DegradeMode::Aggregated { k } => CovariancePath::Aggregated { k, n },
            DegradeMode::TimeScaled { k } => CovariancePath::TimeScaled { k },
        }
    }
}

/// Covariance used for the per-entry tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgeCovariance {
    /// Sandwich at the estimate with the known noise variances.
    #[default]
    PlugIn,
    /// Sandwich at the true parameter.
    Truth,
}

fn default_init_offset() -> f64 {
    0.001
}

fn default_halfwidth() -> f64 {
    0.5
}

fn default_panels() -> usize {
    DEFAULT_PANELS
}

fn default_max_iters() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub noise_sigma: f64,
    #[serde(rename = "T", alias = "t_end")]
    pub t_end: f64,
    pub alpha: f64,
    #[serde(default)]
    pub degrade: Option<DegradeMode>,
    #[serde(default)]
    pub seed_base: u64,
    /// Fit starts at `θ* − init_offset`.
    #[serde(default = "default_init_offset")]
    pub init_offset: f64,
    /// Fit box is `θ* ± bound_halfwidth`.
    #[serde(default = "default_halfwidth")]
    pub bound_halfwidth: f64,
    /// Simulate without noise; `noise_sigma` still sets the covariance.
    #[serde(default)]
    pub noise_free: bool,
    #[serde(default)]
    pub edge_covariance: EdgeCovariance,
    #[serde(default = "default_panels")]
    pub panels: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

impl ExperimentConfig {
    /// The study's protocol: `T = 1`, `σ = 0.05`, `α = 0.05`, 200 replications.
    pub fn study(preset: Preset, sample_sizes: Vec<usize>) -> Self {
        Self {
            preset,
            sample_sizes,
            replications: 200,
            noise_sigma: 0.05,
            t_end: 1.0,
            alpha: 0.05,
            degrade: None,
            seed_base: 0,
            init_offset: default_init_offset(),
            bound_halfwidth: default_halfwidth(),
            noise_free: false,
            edge_covariance: EdgeCovariance::PlugIn,
            panels: DEFAULT_PANELS,
            max_iters: default_max_iters(),
        }
    }

    pub fn validate(&self) -> Result<SystemParams> {
        let params = self.preset.params()?;
        let d = params.dim();
        let fail = |m: String| Err(Error::Config(m));
        if self.replications == 0 {
            return fail("replications must be >= 1".into());
        }
        if self.sample_sizes.is_empty() {
            return fail("no sample sizes".into());
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < d + 2) {
            return fail(format!("sample size {n} below d + 2 = {}", d + 2));
        }
        if let Some(DegradeMode::Aggregated { k }) = self.degrade {
            if k < 2 {
                return fail(format!("aggregation factor must be >= 2, got {k}"));
            }
            if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < (d + 1) * k) {
                return fail(format!("sample size {n} below (d + 1)k = {}", (d + 1) * k));
            }
        }
        if let Some(DegradeMode::TimeScaled { k }) = self.degrade {
            if !(k > 0.0 && k.is_finite()) {
                return fail(format!("time scale must be positive, got {k}"));
            }
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be positive".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return fail("T must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha must lie in (0, 1)".into());
        }
        if !(self.bound_halfwidth > 0.0 && self.init_offset.abs() <= self.bound_halfwidth) {
            return fail("init_offset must lie inside the box".into());
        }
        if self.panels < 2 || self.panels % 2 != 0 {
            return fail("panels must be even and >= 2".into());
        }
        Ok(params)
    }

    fn variances(&self, d: usize) -> Vec<f64> {
        vec![self.noise_sigma * self.noise_sigma; d]
    }

    fn path(&self, n: usize) -> CovariancePath {
        self.degrade
            .map_or(CovariancePath::Original, |m| m.covariance_path(n))
    }

    fn n_tilde(&self, n: usize) -> usize {
        self.path(n).effective_n(n)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise seed of one replication: the splitmix64 finalizer chained over
/// `(seed_base, n, rep)`.
pub fn replication_seed(seed_base: u64, n: usize, rep: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed_base) ^ n as u64) ^ rep as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub n_tilde: usize,
    pub rep: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    /// Estimate in the original parameterization.
    pub theta_hat: Option<ThetaVec>,
    pub sq_error: Option<f64>,
    pub cr_statistic: Option<f64>,
    pub in_cr: Option<bool>,
    /// `rejections[j][k]`: `a_jk = 0` rejected.
    pub rejections: Option<Vec<Vec<bool>>>,
    pub failure: Option<String>,
}

impl ReplicationRecord {
    pub fn usable(&self) -> bool {
        self.failure.is_none()
    }
}

/// Quantities shared by every replication at one sample size.
struct SampleContext {
    truth: SystemParams,
    theta_star: ThetaVec,
    truth_cov: CovarianceReport,
}

impl SampleContext {
    fn new(config: &ExperimentConfig, truth: SystemParams, n: usize) -> Result<Self> {
        let theta_star = truth.pack();
        let truth_cov = sandwich(
            &theta_star,
            config.t_end,
            &config.variances(truth.dim()),
            config.path(n),
            config.panels,
        )?;
        Ok(Self {
            truth,
            theta_star,
            truth_cov,
        })
    }
}

pub fn run_replication(config: &ExperimentConfig, n: usize, rep: usize) -> Result<ReplicationRecord> {
    let truth = config.validate()?;
    let ctx = SampleContext::new(config, truth, n)?;
    Ok(replicate(config, &ctx, n, rep))
}

fn replicate(config: &ExperimentConfig, ctx: &SampleContext, n: usize, rep: usize) -> ReplicationRecord {
    let seed = replication_seed(config.seed_base, n, rep);
    let mut record = ReplicationRecord {
        n,
        n_tilde: config.n_tilde(n),
        rep,
        seed,
        converged: false,
        iterations: 0,
        theta_hat: None,
        sq_error: None,
        cr_statistic: None,
        in_cr: None,
        rejections: None,
        failure: None,
    };
    if let Err(e) = score(config, ctx, n, seed, &mut record) {
        record.failure = Some(e.to_string());
    }
    record
}

fn score(
    config: &ExperimentConfig,
    ctx: &SampleContext,
    n: usize,
    seed: u64,
    record: &mut ReplicationRecord,
) -> Result<()> {
    let d = ctx.truth.dim();
    let noise = if config.noise_free {
        Noise::Free
    } else {
        Noise::Gaussian(NoiseSpec::isotropic(d, config.noise_sigma, seed)?)
    };
    let obs = simulate_observations(&ctx.truth, n, config.t_end, &noise)?;
    let spec = config.degrade.map(|m| m.spec(obs.delta_t()));
    let star = &ctx.theta_star;
    let lower = star.map(|_, v| v - config.bound_halfwidth);
    let upper = star.map(|_, v| v + config.bound_halfwidth);
    let init = star.map(|_, v| v - config.init_offset);

    let (data, opts) = match spec {
        None => (obs, FitOptions::boxed(init, star, config.bound_halfwidth)),
        Some(spec @ DegradedSpec::Aggregated { k, .. }) => {
            // box and start around the degraded system's true parameters
            let tilde = forward_params(&ctx.truth, &spec)?.pack();
            (
                aggregate(&obs, k)?,
                FitOptions::boxed(
                    tilde.map(|_, v| v - config.init_offset),
                    &tilde,
                    config.bound_halfwidth,
                ),
            )
        }
        Some(DegradedSpec::TimeScaled { k }) => {
            // the same box and start, expressed on the dilated clock
            let to_tilde = |v: &ThetaVec| v.map(|i, x| if i < d { x } else { x / k });
            let opts = FitOptions {
                lower: to_tilde(&lower),
                upper: to_tilde(&upper),
                init: to_tilde(&init),
                grad_tol: DEFAULT_GRAD_TOL,
                max_iters: config.max_iters,
                step_tol: DEFAULT_STEP_TOL,
                scale: Some(star.map(|i, _| if i < d { 1.0 } else { 1.0 / k })),
            };
            (time_scale(&obs, k)?, opts)
        }
    };
    let opts = FitOptions {
        max_iters: config.max_iters,
        ..opts
    };
    let est = fit(&data, &opts)?;
    record.converged = est.converged;
    record.iterations = est.iterations;
    let theta_hat = match &spec {
        Some(spec) => g_map(&est.theta_hat, spec)?,
        None => est.theta_hat,
    };
    record.theta_hat = Some(theta_hat.clone());
    if !est.converged {
        return Err(Error::FitNotConverged { iterations: est.iterations });
    }
    record.sq_error = Some(
        theta_hat
            .as_slice()
            .iter()
            .zip(star.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum(),
    );
    let n_used = record.n_tilde;
    let cr = cr_test(&theta_hat, star, &ctx.truth_cov, n_used, config.alpha)?;
    record.cr_statistic = Some(cr.statistic);
    record.in_cr = Some(cr.inside);
    let rejections = match config.edge_covariance {
        EdgeCovariance::Truth => edge_test(&theta_hat, &ctx.truth_cov, n_used, config.alpha)?,
        EdgeCovariance::PlugIn => {
            let cov = sandwich(
                &theta_hat,
                config.t_end,
                &config.variances(d),
                config.path(n),
                config.panels,
            )?;
            edge_test(&theta_hat, &cov, n_used, config.alpha)?
        }
    };
    record.rejections = Some(rejections);
    Ok(())
}

/// Rate in percent for the 1-based entry `a_jk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryRate {
    pub j: usize,
    pub k: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub n: usize,
    pub n_tilde: usize,
    pub mse: f64,
    pub within_cr_rate: f64,
    /// Rejection rate at each true zero of `A`.
    pub type1: Vec<EntryRate>,
    /// Non-rejection rate at each true non-zero of `A`.
    pub type2: Vec<EntryRate>,
    pub replications_used: usize,
    pub failures: usize,
}

impl MetricsRow {
    pub fn type1_at(&self, j: usize, k: usize) -> Option<f64> {
        self.type1.iter().find(|e| e.j == j && e.k == k).map(|e| e.rate)
    }

    pub fn type2_at(&self, j: usize, k: usize) -> Option<f64> {
        self.type2.iter().find(|e| e.j == j && e.k == k).map(|e| e.rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rows: Vec<MetricsRow>,
}

impl MetricsSummary {
    pub fn row(&self, n: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// True when some sample size had no usable replication.
    pub fn has_empty_row(&self) -> bool {
        self.rows.iter().any(|r| r.replications_used == 0)
    }
}

/// Metrics for the records of one sample size. Records are put in
/// replication order first, so the result does not depend on input order.
pub fn summarize(records: &[ReplicationRecord], truth: &SystemParams) -> Result<MetricsRow> {
    let n = records.first().map_or(0, |r| r.n);
    if records.iter().any(|r| r.n != n) {
        return Err(Error::Config("summarize expects records of one sample size".into()));
    }
    let mut used: Vec<&ReplicationRecord> = records.iter().filter(|r| r.usable()).collect();
    if used.is_empty() {
        return Err(Error::EmptySummary { n });
    }
    used.sort_by_key(|r| r.rep);
    let count = used.len() as f64;
    let pct = |hits: usize| 100.0 * hits as f64 / count;
    let mse = used.iter().map(|r| r.sq_error.unwrap_or(f64::NAN)).sum::<f64>() / count;
    let inside = used.iter().filter(|r| r.in_cr == Some(true)).count();

    let d = truth.dim();
    let mut type1 = Vec::new();
    let mut type2 = Vec::new();
    for j in 0..d {
        for k in 0..d {
            let rejected = used
                .iter()
                .filter(|r| r.rejections.as_ref().is_some_and(|m| m[j][k]))
                .count();
            if truth.a[(j, k)] == 0.0 {
                type1.push(EntryRate { j: j + 1, k: k + 1, rate: pct(rejected) });
            } else {
                type2.push(EntryRate { j: j + 1, k: k + 1, rate: pct(used.len() - rejected) });
            }
        }
    }
    Ok(MetricsRow {
        n,
        n_tilde: used[0].n_tilde,
        mse,
        within_cr_rate: pct(inside),
        type1,
        type2,
        replications_used: used.len(),
        failures: records.len() - used.len(),
    })
}

fn empty_row(config: &ExperimentConfig, truth: &SystemParams, n: usize, failures: usize) -> MetricsRow {
    let d = truth.dim();
    let entries = |zero: bool| {
        (0..d)
            .flat_map(|j| (0..d).map(move |k| (j, k)))
            .filter(|&(j, k)| (truth.a[(j, k)] == 0.0) == zero)
            .map(|(j, k)| EntryRate { j: j + 1, k: k + 1, rate: f64::NAN })
            .collect()
    };
    MetricsRow {
        n,
        n_tilde: config.n_tilde(n),
        mse: f64::NAN,
        within_cr_rate: f64::NAN,
        type1: entries(true),
        type2: entries(false),
        replications_used: 0,
        failures,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: MetricsSummary,
    /// Ordered by `(n, rep)`.
    pub records: Vec<ReplicationRecord>,
}

/// Runs every `(n, rep)` pair on the rayon pool. A sample size with no
/// usable replication yields a row with `replications_used = 0` and NaN
/// metrics rather than an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let truth = config.validate()?;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for &n in &config.sample_sizes {
        let ctx = SampleContext::new(config, truth.clone(), n)?;
        let batch: Vec<ReplicationRecord> = (0..config.replications)
            .into_par_iter()
            .map(|rep| replicate(config, &ctx, n, rep))
            .collect();
        rows.push(match summarize(&batch, &truth) {
            Ok(row) => row,
            Err(Error::EmptySummary { .. }) => empty_row(config, &truth, n, batch.len()),
            Err(e) => return Err(e),
        });
        records.extend(batch);
    }
    Ok(ExperimentOutput {
        summary: MetricsSummary { rows },
        records,
    })
}

fn entry_name(prefix: &str, e: &EntryRate) -> String {
    format!("{prefix}_a{}{}", e.j, e.k)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes `summary.csv`, `records.jsonl` and one long-format CSV per metric
/// (`plot_mse.csv`, `plot_cr_rate.csv`, `plot_type1.csv`, `plot_type2.csv`).
pub fn write_artifacts(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = &output.summary.rows;
    let mut written = Vec::new();

    let path = dir.join("summary.csv");
    {
        let mut w = csv::Writer::from_writer(create(&path)?);
        let mut header: Vec<String> = ["n", "n_tilde", "mse", "cr_rate"].map(String::from).to_vec();
        if let Some(first) = rows.first() {
            header.extend(first.type1.iter().map(|e| entry_name("type1", e)));
            header.extend(first.type2.iter().map(|e| entry_name("type2", e)));
        }
        header.push("replications_used".into());
        header.push("failures".into());
        w.write_record(&header)?;
        for r in rows {
            let mut rec = vec![
                r.n.to_string(),
                r.n_tilde.to_string(),
                r.mse.to_string(),
                r.within_cr_rate.to_string(),
            ];
            rec.extend(r.type1.iter().chain(&r.type2).map(|e| e.rate.to_string()));
            rec.push(r.replications_used.to_string());
            rec.push(r.failures.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    written.push(path);

    let path = dir.join("records.jsonl");
    {
        let mut w = create(&path)?;
        for rec in &output.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    written.push(path);

    for (name, value) in [
        ("mse", (|r: &MetricsRow| r.mse) as fn(&MetricsRow) -> f64),
        ("cr_rate", |r: &MetricsRow| r.within_cr_rate),
    ] {
        let path = dir.join(format!("plot_{name}.csv"));
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["n", "n_tilde", name])?;
        for r in rows {
            w.write_record([r.n.to_string(), r.n_tilde.to_string(), value(r).to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    for (name, pick) in [
        ("type1", (|r: &MetricsRow| &r.type1) as fn(&MetricsRow) -> &Vec<EntryRate>),
        ("type2", |r: &MetricsRow| &r.type2),
    ] {
        let path = dir.join(format!("plot_{name}.csv"));
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["n", "n_tilde", "entry", "rate"])?;
        for r in rows {
            for e in pick(r) {
                w.write_record([
                    r.n.to_string(),
                    r.n_tilde.to_string(),
                    format!("a{}{}", e.j, e.k),
                    e.rate.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(preset: Preset) -> ExperimentConfig {
        let mut c = ExperimentConfig::study(preset, vec![100]);
        c.replications = 4;
        c
    }

    #[test]
    fn presets_match_study_values() {
        let d2 = preset_params("d2").unwrap();
        assert_eq!(d2.a[(0, 1)], -0.1);
        assert_eq!(d2.x0.as_slice(), &[1.87, -0.98]);
        let d3 = preset_params("d3").unwrap();
        assert!((0..3).all(|j| d3.a[(j, 1)] == 0.0));
        assert_eq!(d3.x0.as_slice(), &[0.41, 0.14, 1.45]);
        let d4 = preset_params("d4").unwrap();
        assert_eq!(d4.a[(3, 1)], 0.12);
        assert_eq!(d4.x0.as_slice(), &[-0.42, 1.01, 1.97, -0.38]);
        assert!(matches!(preset_params("d5"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn degrade_mode_parsing() {
        assert_eq!("aggregated:5".parse::<DegradeMode>().unwrap(), DegradeMode::Aggregated { k: 5 });
        assert_eq!("timescale:0.1".parse::<DegradeMode>().unwrap(), DegradeMode::TimeScaled { k: 0.1 });
        assert!("aggregated:1".parse::<DegradeMode>().is_err());
        assert!("timescale:-2".parse::<DegradeMode>().is_err());
        assert!("blur:2".parse::<DegradeMode>().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{"preset":"d3","sample_sizes":[100,200],"replications":3,
            "noise_sigma":0.05,"T":1.0,"alpha":0.05,
            "degrade":{"mode":"aggregated","k":5},"seed_base":7}"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.init_offset, 0.001);
        assert_eq!(c.bound_halfwidth, 0.5);
        assert_eq!(c.degrade, Some(DegradeMode::Aggregated { k: 5 }));
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let custom = r#"{"custom":{"x0":[1.0],"a":[[-0.5]]}}"#;
        let p: Preset = serde_json::from_str(custom).unwrap();
        assert_eq!(p.params().unwrap().a[(0, 0)], -0.5);
    }

    #[test]
    fn config_validation() {
        let mut c = small(Preset::D3);
        c.sample_sizes = vec![4];
        assert!(c.validate().is_err());
        let mut c = small(Preset::D3);
        c.degrade = Some(DegradeMode::Aggregated { k: 30 });
        assert!(c.validate().is_err());
        let mut c = small(Preset::D3);
        c.replications = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(replication_seed(0, 100, 0), replication_seed(0, 100, 0));
        assert_ne!(replication_seed(0, 100, 0), replication_seed(0, 100, 1));
        assert_ne!(replication_seed(0, 100, 0), replication_seed(0, 200, 0));
        assert_ne!(replication_seed(0, 100, 0), replication_seed(1, 100, 0));
        // splitmix64 reference value for input 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn replication_is_deterministic() {
        let c = small(Preset::D2);
        let a = run_replication(&c, 100, 3).unwrap();
        let b = run_replication(&c, 100, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.usable(), "{a:?}");
    }

    #[test]
    fn noise_free_replication_is_exact() {
        let mut c = small(Preset::D3);
        c.noise_free = true;
        let truth = c.preset.params().unwrap();
        let r = run_replication(&c, 200, 0).unwrap();
        assert!(r.usable(), "{r:?}");
        assert!(r.sq_error.unwrap() < 1e-12);
        assert_eq!(r.in_cr, Some(true));
        let rej = r.rejections.unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let a = truth.a[(j, k)].abs();
                if a == 0.0 || a > 0.5 {
                    assert_eq!(rej[j][k], a > 0.0, "({j}, {k})");
                }
            }
        }
    }

    fn record(rep: usize, sq: f64, inside: bool, rej: Vec<Vec<bool>>) -> ReplicationRecord {
        ReplicationRecord {
            n: 100,
            n_tilde: 100,
            rep,
            seed: 0,
            converged: true,
            iterations: 1,
            theta_hat: None,
            sq_error: Some(sq),
            cr_statistic: Some(if inside { 1.0 } else { 100.0 }),
            in_cr: Some(inside),
            rejections: Some(rej),
            failure: None,
        }
    }

    #[test]
    fn summarize_basics() {
        let truth = preset_params("d2").unwrap();
        let exact = record(0, 0.0, true, vec![vec![true, true], vec![true, false]]);
        let row = summarize(&[exact.clone()], &truth).unwrap();
        assert_eq!(row.mse, 0.0);
        assert_eq!(row.within_cr_rate, 100.0);
        assert_eq!(row.type1_at(2, 2), Some(0.0));
        assert_eq!(row.type2.len(), 3);
        assert!(row.type2.iter().all(|e| e.rate == 0.0));

        let outside = record(1, 0.5, false, vec![vec![false, true], vec![true, true]]);
        let row = summarize(&[exact.clone(), outside.clone()], &truth).unwrap();
        assert_eq!(row.within_cr_rate, 50.0);
        assert_eq!(row.type1_at(2, 2), Some(50.0));
        assert_eq!(row.type2_at(1, 1), Some(50.0));
        assert_eq!(row.mse, 0.25);
        let swapped = summarize(&[outside, exact], &truth).unwrap();
        assert_eq!(swapped, row);
    }

    #[test]
    fn summarize_excludes_failures() {
        let truth = preset_params("d2").unwrap();
        let mut bad = record(1, 9.0, false, vec![vec![false; 2]; 2]);
        bad.failure = Some("no convergence".into());
        let good = record(0, 0.0, true, vec![vec![true, true], vec![true, false]]);
        let row = summarize(&[good, bad.clone()], &truth).unwrap();
        assert_eq!((row.replications_used, row.failures), (1, 1));
        assert!(matches!(summarize(&[bad], &truth), Err(Error::EmptySummary { n: 100 })));
    }

    #[test]
    fn experiment_artifacts() {
        let mut c = small(Preset::D2);
        c.replications = 1;
        c.noise_free = true;
        let out = run_experiment(&c).unwrap();
        let row = out.summary.row(100).unwrap();
        assert!(row.mse < 1e-12);
        assert_eq!(row.within_cr_rate, 100.0);
        assert_eq!(row.type1_at(2, 2), Some(0.0));
        assert!(row.type2.iter().all(|e| e.rate == 0.0));

        let dir = tempfile::tempdir().unwrap();
        write_artifacts(&out, dir.path()).unwrap();
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(summary.starts_with(
            "n,n_tilde,mse,cr_rate,type1_a22,type2_a11,type2_a12,type2_a21,replications_used,failures\n"
        ));
        let lines = fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 1);
        assert!(dir.path().join("plot_type2.csv").exists());
    }
}
