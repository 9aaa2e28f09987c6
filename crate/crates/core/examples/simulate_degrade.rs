//! Simulates a noisy trajectory, degrades it by aggregation and by a clock
//! change, and maps the degraded systems' parameters back.

use odeid::degraded::{aggregate, forward_params, g_map, time_scale, DegradedSpec};
use odeid::harness::preset_params;
use odeid::model::{simulate_observations, trajectory};
use odeid::{Noise, NoiseSpec};

fn main() -> odeid::Result<()> {
    let truth = preset_params("d2")?;
    let noise = Noise::Gaussian(NoiseSpec::isotropic(2, 0.05, 42)?);
    let obs = simulate_observations(&truth, 100, 1.0, &noise)?;
    println!("{} samples on [0, {}], spacing {:.4}", obs.n(), obs.t_end(), obs.delta_t());

    let agg = aggregate(&obs, 5)?;
    let spec = DegradedSpec::aggregated(5, obs.delta_t())?;
    let tilde = forward_params(&truth, &spec)?;
    println!("aggregated: {} block means, spacing {:.4}", agg.n(), agg.delta_t());
    println!("  block means follow x0~ = {:.4}", tilde.x0.transpose());
    let clean = trajectory(&tilde, &agg.times())?;
    println!("  mean residual {:.4}", (agg.values() - clean).mean());
    let back = g_map(&tilde.pack(), &spec)?;
    println!("  g(theta~) - theta = {:.2e}", (back.to_dvector() - truth.pack().to_dvector()).amax());

    let scaled = time_scale(&obs, 10.0)?;
    let spec = DegradedSpec::time_scaled(10.0)?;
    let tilde = forward_params(&truth, &spec)?;
    println!("time-scaled by 10: horizon {}, A~ = {:.4}", scaled.t_end(), tilde.a);

    let mut csv = Vec::new();
    agg.write_csv(&mut csv)?;
    println!("{}", String::from_utf8_lossy(&csv).lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}
