//! Fits aggregated and time-scaled data and compares their covariances,
//! mapped back to the original parameters, with the original-data one.

use odeid::degraded::{aggregate, forward_params, g_map, time_scale, DegradedSpec};
use odeid::harness::preset_params;
use odeid::inference::{sandwich, CovariancePath, DEFAULT_PANELS};
use odeid::model::simulate_observations;
use odeid::nls::{fit, FitOptions};
use odeid::{Noise, NoiseSpec};

fn main() -> odeid::Result<()> {
    let truth = preset_params("d2")?;
    let (n, k) = (1000, 5);
    let noise = Noise::Gaussian(NoiseSpec::isotropic(2, 0.05, 5)?);
    let obs = simulate_observations(&truth, n, 1.0, &noise)?;
    let sigma = vec![0.0025; 2];
    let star = truth.pack();

    let spec = DegradedSpec::aggregated(k, obs.delta_t())?;
    let tilde = forward_params(&truth, &spec)?.pack();
    let agg = aggregate(&obs, k)?;
    let est = fit(&agg, &FitOptions::boxed(tilde.map(|_, v| v - 0.001), &tilde, 0.5))?;
    let theta_agg = g_map(&est.theta_hat, &spec)?;
    println!("aggregated fit mapped back: {:?}", theta_agg.as_slice());

    let scaled = time_scale(&obs, 10.0)?;
    let spec = DegradedSpec::time_scaled(10.0)?;
    let tilde = forward_params(&truth, &spec)?.pack();
    let est = fit(&scaled, &FitOptions::boxed(tilde.clone(), &tilde, 0.05))?;
    println!("time-scaled fit mapped back: {:?}", g_map(&est.theta_hat, &spec)?.as_slice());

    let paths = [
        CovariancePath::Original,
        CovariancePath::Aggregated { k, n },
        CovariancePath::TimeScaled { k: 10.0 },
    ];
    for path in paths {
        let cov = sandwich(&star, 1.0, &sigma, path, DEFAULT_PANELS)?;
        let n_used = path.effective_n(n) as f64;
        let se: Vec<String> = cov.sigma_n.diagonal().iter().map(|v| format!("{:.4}", (v / n_used).sqrt())).collect();
        println!("{path:?}: standard errors {}", se.join(" "));
    }
    Ok(())
}
