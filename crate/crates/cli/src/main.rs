use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use odeid::degraded::{aggregate, g_map, time_scale, DegradedSpec};
use odeid::harness::{preset_params, run_experiment, write_artifacts, DegradeMode, ExperimentConfig};
use odeid::identifiability::{recover_exact, ToleranceSet};
use odeid::inference::{estimate_noise_variances, infer, sandwich, CovariancePath, DEFAULT_PANELS};
use odeid::model::simulate_observations;
use odeid::nls::{fit, EstimationResult, FitOptions};
use odeid::{Error, Matrix, Noise, NoiseSpec, ObsLabel, ObservationSet, SystemParams, ThetaVec};

#[derive(Parser)]
#[command(name = "odeid", version, about = "Identify, fit and test linear ODE systems from one trajectory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover (x0, A) exactly from the first d + 1 noise-free samples.
    Recover {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = ToleranceSet::default().rank_rel)]
        rank_tol: f64,
    },
    /// Sample a trajectory on [0, T], optionally degraded.
    Simulate {
        /// d2, d3 or d4.
        #[arg(long, conflicts_with = "params")]
        preset: Option<String>,
        /// JSON file `{"x0": [...], "A": [[...]]}`.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long = "t-end", default_value_t = 1.0)]
        t_end: f64,
        /// Noise standard deviation; 0 gives exact samples.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// `aggregated:<k>` or `timescale:<k>`; written next to `--out`.
        #[arg(long)]
        degrade: Option<DegradeMode>,
    },
    /// Nonlinear least-squares fit inside a box.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// FitOptions JSON (init, lower, upper, grad_tol, max_iters, step_tol).
        #[arg(long)]
        options: Option<PathBuf>,
        /// Start from these parameters with a ±10 box instead.
        #[arg(long, conflicts_with = "options")]
        init: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confidence region, intervals and edge tests for a fitted estimate.
    Infer {
        /// EstimationResult JSON from `fit`.
        #[arg(long = "fit")]
        fit_result: PathBuf,
        /// The observations that were fitted.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// `known:<v1,...>` noise variances of the original data, or `estimate`.
        #[arg(long, default_value = "estimate")]
        sigma: SigmaArg,
        /// How `--input` was produced: `original`, `aggregated:<k>` or `timescale:<k>`.
        #[arg(long, default_value = "original")]
        path: PathArg,
        /// Reference parameters for the confidence-region test.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PANELS)]
        panels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo sweep over sample sizes.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Debug)]
enum SigmaArg {
    Known(Vec<f64>),
    Estimate,
}

impl std::str::FromStr for SigmaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "estimate" {
            return Ok(SigmaArg::Estimate);
        }
        let list = s
            .strip_prefix("known:")
            .ok_or_else(|| format!("expected known:<v1,...> or estimate, got `{s}`"))?;
        list.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(SigmaArg::Known)
    }
}

#[derive(Clone, Copy, Debug)]
enum PathArg {
    Original,
    Degraded(DegradeMode),
}

impl std::str::FromStr for PathArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "original" {
            return Ok(PathArg::Original);
        }
        s.parse::<DegradeMode>()
            .map(PathArg::Degraded)
            .map_err(|e| e.to_string())
    }
}

/// `{"x0": [...], "A": [[...]]}`
#[derive(Serialize, Deserialize)]
struct ParamsJson {
    x0: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
}

impl ParamsJson {
    fn from_params(p: &SystemParams) -> Self {
        Self {
            x0: p.x0.iter().copied().collect(),
            a: rows(&p.a),
        }
    }

    fn to_params(&self) -> Result<SystemParams> {
        let rows: Vec<&[f64]> = self.a.iter().map(Vec::as_slice).collect();
        Ok(SystemParams::from_rows(&self.x0, &rows)?)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn read_obs(path: &Path) -> Result<ObservationSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(ObservationSet::read_csv(BufReader::new(file), ObsLabel::Noisy)?)
}

fn write_obs(obs: &ObservationSet, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(obs.write_csv(io::BufWriter::new(file))?)
}

fn degraded_path(out: &Path, mode: &DegradeMode) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("obs");
    let tag = mode.to_string().replace(':', "_");
    out.with_file_name(format!("{stem}_{tag}.csv"))
}

fn recover(input: &Path, out: Option<&Path>, rank_rel: f64) -> Result<ExitCode> {
    let obs = read_obs(input)?;
    let tol = ToleranceSet {
        rank_rel,
        ..ToleranceSet::default()
    };
    match recover_exact(&obs, &tol) {
        Ok(params) => {
            write_json(&ParamsJson::from_params(&params), out)?;
            Ok(ExitCode::SUCCESS)
        }
        Err(
            e @ (Error::SingularWindow { .. }
            | Error::ComplexSpectrum { .. }
            | Error::NearDegenerate { .. }
            | Error::NonPositiveEigenvalue { .. }),
        ) => {
            eprintln!("odeid: {e}");
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    preset: Option<&str>,
    params: Option<&Path>,
    n: usize,
    t_end: f64,
    sigma: f64,
    seed: u64,
    out: &Path,
    degrade: Option<DegradeMode>,
) -> Result<()> {
    let truth = match (preset, params) {
        (Some(name), _) => preset_params(name)?,
        (None, Some(path)) => read_json::<ParamsJson>(path)?.to_params()?,
        (None, None) => bail!("one of --preset or --params is required"),
    };
    let noise = if sigma == 0.0 {
        Noise::Free
    } else {
        Noise::Gaussian(NoiseSpec::isotropic(truth.dim(), sigma, seed)?)
    };
    let obs = simulate_observations(&truth, n, t_end, &noise)?;
    write_obs(&obs, out)?;
    if let Some(mode) = degrade {
        let degraded = match mode {
            DegradeMode::Aggregated { k } => aggregate(&obs, k)?,
            DegradeMode::TimeScaled { k } => time_scale(&obs, k)?,
        };
        let path = degraded_path(out, &mode);
        write_obs(&degraded, &path)?;
        eprintln!("wrote {} and {}", out.display(), path.display());
    }
    Ok(())
}

fn fit_cmd(input: &Path, options: Option<&Path>, init: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let obs = read_obs(input)?;
    let opts: FitOptions = match (options, init) {
        (Some(path), _) => read_json(path)?,
        (None, Some(path)) => FitOptions::around(read_json::<ParamsJson>(path)?.to_params()?.pack()),
        (None, None) => {
            let start = recover_exact(&obs, &ToleranceSet::default())
                .context("no --options or --init given and exact recovery from the data failed")?;
            FitOptions::around(start.pack())
        }
    };
    let result = fit(&obs, &opts)?;
    if !result.converged {
        eprintln!("odeid: fit stopped after {} iterations without converging", result.iterations);
    }
    write_json(&result, out)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct InferReport {
    /// Estimate in the original parameterization.
    theta_hat: ThetaVec,
    params: ParamsJson,
    variances: Vec<f64>,
    /// Covariance of `√n (θ̂ − θ)`, one array per row.
    sigma_n: Vec<Vec<f64>>,
    #[serde(flatten)]
    outcome: odeid::inference::InferenceOutcome,
}

#[allow(clippy::too_many_arguments)]
fn infer_cmd(
    fit_path: &Path,
    input: &Path,
    alpha: f64,
    sigma: &SigmaArg,
    path: PathArg,
    reference: Option<&Path>,
    panels: usize,
    out: Option<&Path>,
) -> Result<()> {
    let est: EstimationResult = read_json(fit_path)?;
    let obs = read_obs(input)?;
    // Recover the original sample count, horizon and parameterization.
    let (theta_hat, n, t_end, cov_path, var_scale) = match path {
        PathArg::Original => (est.theta_hat.clone(), obs.n(), obs.t_end(), CovariancePath::Original, 1.0),
        PathArg::Degraded(DegradeMode::Aggregated { k }) => {
            let n = obs.n() * k;
            let base = obs.delta_t() / k as f64;
            let spec = DegradedSpec::aggregated(k, base)?;
            let theta = g_map(&est.theta_hat, &spec)?;
            (theta, n, (n - 1) as f64 * base, CovariancePath::Aggregated { k, n }, k as f64)
        }
        PathArg::Degraded(DegradeMode::TimeScaled { k }) => {
            let theta = g_map(&est.theta_hat, &DegradedSpec::time_scaled(k)?)?;
            (theta, obs.n(), obs.t_end() / k, CovariancePath::TimeScaled { k }, 1.0)
        }
    };
    let variances = match sigma {
        SigmaArg::Known(v) => v.clone(),
        SigmaArg::Estimate => estimate_noise_variances(&est.theta_hat, &obs)?
            .into_iter()
            .map(|v| v * var_scale)
            .collect(),
    };
    let reference = reference
        .map(|p| read_json::<ParamsJson>(p)?.to_params().map(|p| p.pack()))
        .transpose()?;
    let cov = sandwich(&theta_hat, t_end, &variances, cov_path, panels)?;
    let outcome = infer(&theta_hat, reference.as_ref(), &cov, cov_path.effective_n(n), alpha)?;
    let report = InferReport {
        params: ParamsJson::from_params(&theta_hat.unpack()?),
        theta_hat,
        variances,
        sigma_n: rows(&cov.sigma_n),
        outcome,
    };
    write_json(&report, out)
}

fn experiment(config: &Path, out: &Path) -> Result<ExitCode> {
    let config: ExperimentConfig = read_json(config)?;
    let output = run_experiment(&config)?;
    write_artifacts(&output, out)?;
    for row in &output.summary.rows {
        eprintln!(
            "n={:<6} mse={:.4} cr={:.1}% used={} failures={}",
            row.n, row.mse, row.within_cr_rate, row.replications_used, row.failures
        );
    }
    if output.summary.has_empty_row() {
        eprintln!("odeid: some sample size had no converged replication");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Recover { input, out, rank_tol } => recover(&input, out.as_deref(), rank_tol),
        Command::Simulate {
            preset,
            params,
            n,
            t_end,
            sigma,
            seed,
            out,
            degrade,
        } => simulate(preset.as_deref(), params.as_deref(), n, t_end, sigma, seed, &out, degrade)
            .map(|_| ExitCode::SUCCESS),
        Command::Fit {
            input,
            options,
            init,
            out,
        } => fit_cmd(&input, options.as_deref(), init.as_deref(), out.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Infer {
            fit_result,
            input,
            alpha,
            sigma,
            path,
            reference,
            panels,
            out,
        } => infer_cmd(
            &fit_result,
            &input,
            alpha,
            &sigma,
            path,
            reference.as_deref(),
            panels,
            out.as_deref(),
        )
        .map(|_| ExitCode::SUCCESS),
        Command::Experiment { config, out } => experiment(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("odeid: {e:#}");
            ExitCode::FAILURE
        }
    }
}
