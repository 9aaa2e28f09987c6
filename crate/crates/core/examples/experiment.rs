//! A reduced Monte-Carlo study: MSE, confidence-region coverage and edge
//! test error rates across sample sizes, written as CSV and JSON lines.

use odeid::harness::{run_experiment, write_artifacts, ExperimentConfig, Preset};

fn main() -> odeid::Result<()> {
    let config = ExperimentConfig {
        replications: 40,
        ..ExperimentConfig::study(Preset::D2, vec![100, 500, 2000])
    };
    let out = run_experiment(&config)?;
    for row in &out.summary.rows {
        let type2: Vec<String> = row.type2.iter().map(|e| format!("a{}{} {:.1}%", e.j, e.k, e.rate)).collect();
        println!(
            "n={:<5} mse={:.5} within CR {:.1}%  type II: {}",
            row.n,
            row.mse,
            row.within_cr_rate,
            type2.join(", ")
        );
    }
    let dir = std::env::temp_dir().join("odeid-experiment");
    for path in write_artifacts(&out, &dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
