//! Sandwich covariance at a fitted estimate, the confidence region test,
//! pointwise intervals and tests of `a_jk = 0`.

use odeid::harness::preset_params;
use odeid::inference::{estimate_noise_variances, infer, sandwich, CovariancePath, DEFAULT_PANELS};
use odeid::model::simulate_observations;
use odeid::nls::{fit, FitOptions};
use odeid::{Noise, NoiseSpec};

fn main() -> odeid::Result<()> {
    let truth = preset_params("d3")?;
    let (n, sigma) = (2000, 0.05);
    let noise = Noise::Gaussian(NoiseSpec::isotropic(3, sigma, 11)?);
    let obs = simulate_observations(&truth, n, 1.0, &noise)?;
    let star = truth.pack();
    let est = fit(&obs, &FitOptions::boxed(star.map(|_, v| v - 0.001), &star, 0.5))?;

    let known = vec![sigma * sigma; 3];
    println!("estimated noise variances {:?}", estimate_noise_variances(&est.theta_hat, &obs)?);
    let cov = sandwich(&est.theta_hat, 1.0, &known, CovariancePath::Original, DEFAULT_PANELS)?;
    println!("quadrature used {} panels", cov.quadrature_panels);

    let out = infer(&est.theta_hat, Some(&star), &cov, n, 0.05)?;
    if let Some(cr) = out.cr {
        println!("CR statistic {:.2} vs critical {:.2}: truth inside = {}", cr.statistic, cr.critical, cr.inside);
    }
    let d = 3;
    for j in 0..d {
        for k in 0..d {
            let i = d + j * d + k;
            println!(
                "a{}{} = {:+.3}  [{:+.3}, {:+.3}]  edge {}",
                j + 1,
                k + 1,
                est.theta_hat[i],
                out.ci_lower[i],
                out.ci_upper[i],
                if out.edge_rejections[j][k] { "present" } else { "not detected" }
            );
        }
    }
    Ok(())
}
