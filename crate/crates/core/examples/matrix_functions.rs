//! Matrix exponential, real logarithm, eigendecomposition and the
//! derivative of `e^{At}` in one entry of `A`.

use odeid::linalg::{eig_real, expm, logm_real, DEFAULT_SEPARATION_TOL};
use odeid::nls::{dexpm_da, dexpm_da_fallback};
use odeid::Matrix;

fn main() -> odeid::Result<()> {
    let a = Matrix::from_row_slice(3, 3, &[1.76, 0.0, 0.98, 2.24, 0.0, -0.98, 0.95, 0.0, -0.1]);
    let eig = eig_real(&a, DEFAULT_SEPARATION_TOL)?;
    println!("eigenvalues {:.4}", eig.lambdas.transpose());
    println!("reconstruction error {:.2e}", (eig.reconstruct() - &a).amax());

    let e = expm(&a)?;
    println!("e^A = {e:.4}");
    let back = logm_real(&e)?;
    println!("log(e^A) - A: {:.2e}", (back - &a).amax());

    let t = 0.7;
    let closed = dexpm_da(&a, t, 0, 2)?;
    let block = dexpm_da_fallback(&a, t, 0, 2);
    println!("d e^(At) / d a_13 at t = {t}: {closed:.4}");
    println!("closed form vs block exponential {:.2e}", (closed - block).amax());
    Ok(())
}
