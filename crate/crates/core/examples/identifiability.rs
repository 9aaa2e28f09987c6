//! Checks the identifiability conditions for a few systems and recovers
//! `(x0, A)` exactly from `d + 1` noise-free samples.

use odeid::harness::preset_params;
use odeid::identifiability::{check_identifiable, recover_exact, ToleranceSet};
use odeid::model::simulate_observations;
use odeid::{Noise, SystemParams};

fn main() -> odeid::Result<()> {
    let tol = ToleranceSet::default();
    let truth = preset_params("d3")?;
    let report = check_identifiable(&truth, &tol);
    println!("d3 preset: {report:?}");

    // d + 1 = 4 samples with spacing 0.1
    let obs = simulate_observations(&truth, 4, 0.3, &Noise::Free)?;
    let back = recover_exact(&obs, &tol)?;
    println!("recovered x0 = {:.6}", back.x0.transpose());
    println!("recovered A = {:.6}", back.a);
    let err = (back.pack().to_dvector() - truth.pack().to_dvector()).amax();
    println!("max parameter error {err:.2e}");

    // x0 on an eigenvector spans a one-dimensional Krylov space
    let stuck = SystemParams::from_rows(&[1.0, 0.0], &[&[-1.0, 0.0], &[0.0, 2.0]])?;
    println!("x0 on an eigenvector: {:?}", check_identifiable(&stuck, &tol));
    let obs = simulate_observations(&stuck, 3, 0.2, &Noise::Free)?;
    match recover_exact(&obs, &tol) {
        Ok(p) => println!("unexpected recovery {p:?}"),
        Err(e) => println!("recovery refused: {e}"),
    }

    // a rotation has complex eigenvalues
    let rotation = SystemParams::from_rows(&[1.0, 0.0], &[&[0.0, -1.0], &[1.0, 0.0]])?;
    println!("rotation: {:?}", check_identifiable(&rotation, &tol));
    Ok(())
}
