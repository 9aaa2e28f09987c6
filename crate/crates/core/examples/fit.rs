//! Least-squares fit of a two-dimensional system from noisy samples,
//! started near the truth inside a box.

use odeid::harness::preset_params;
use odeid::model::simulate_observations;
use odeid::nls::{fit, objective, FitOptions};
use odeid::{Noise, NoiseSpec};

fn main() -> odeid::Result<()> {
    let truth = preset_params("d2")?;
    let noise = Noise::Gaussian(NoiseSpec::isotropic(2, 0.05, 7)?);
    let obs = simulate_observations(&truth, 500, 1.0, &noise)?;

    let star = truth.pack();
    let opts = FitOptions::boxed(star.map(|_, v| v - 0.001), &star, 0.5);
    let est = fit(&obs, &opts)?;
    println!(
        "converged {} after {} iterations, objective {:.6}, projected gradient {:.1e}",
        est.converged, est.iterations, est.objective, est.grad_norm
    );
    println!("objective at the truth {:.6}", objective(&star, &obs)?);
    let p = est.theta_hat.unpack()?;
    println!("x0^ = {:.4}", p.x0.transpose());
    println!("A^ = {:.4}", p.a);
    let sq: f64 = est.theta_hat.as_slice().iter().zip(star.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
    println!("squared error {sq:.4}");
    Ok(())
}
