#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use odeid::identifiability::{check_identifiable, krylov_matrix, ToleranceSet};
use odeid::linalg::singular_values;
use odeid::{Matrix, SystemParams};
use proptest::prelude::*;

/// `Q Λ Q⁻¹` with `Q = I + P` and eigenvalues spread over `[lo, hi]`, each
/// jittered inside its own slot so the spectrum stays separated.
pub fn spectral_matrix(d: usize, perturb: &[f64], jitter: &[f64], lo: f64, hi: f64) -> Option<Matrix> {
    let q = DMatrix::identity(d, d) + DMatrix::from_row_slice(d, d, perturb);
    let slot = (hi - lo) / d as f64;
    let lambdas = DVector::from_fn(d, |i, _| lo + slot * (i as f64 + 0.25 + 0.5 * jitter[i]));
    let q_inv = q.clone().try_inverse()?;
    let sv = q.singular_values();
    if sv.max() / sv.min() > 30.0 {
        return None;
    }
    Some(&q * DMatrix::from_diagonal(&lambdas) * q_inv)
}

fn raw(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-0.4..0.4f64, d * d),
        prop::collection::vec(0.0..1.0f64, d),
        prop::collection::vec(-1.5..1.5f64, d),
    )
}

/// Systems with separated real eigenvalues in `[lo, hi]` whose Krylov
/// matrix has relative smallest singular value at least `margin`.
pub fn identifiable_system(
    dims: std::ops::RangeInclusive<usize>,
    lo: f64,
    hi: f64,
    margin: f64,
) -> impl Strategy<Value = SystemParams> {
    dims.prop_flat_map(move |d| raw(d).prop_map(move |r| (d, r)))
        .prop_filter_map("ill-conditioned or not identifiable", move |(d, (p, j, x))| {
            let a = spectral_matrix(d, &p, &j, lo, hi)?;
            let params = SystemParams::new(DVector::from_vec(x), a).ok()?;
            let report = check_identifiable(&params, &ToleranceSet::default());
            let sv = singular_values(&krylov_matrix(&params));
            (report.verdict && sv.min() >= margin * sv.max()).then_some(params)
        })
}

/// Relaxed proptest limits for generators that filter heavily.
pub fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        max_global_rejects: 100 * cases,
        ..ProptestConfig::default()
    }
}

/// Arbitrary parameters near a reference system, for checks that hold at
/// every point.
pub fn jittered(base: SystemParams, scale: f64) -> impl Strategy<Value = SystemParams> {
    let d = base.dim();
    prop::collection::vec(-scale..scale, d + d * d).prop_map(move |v| {
        let x0 = &base.x0 + DVector::from_column_slice(&v[..d]);
        let a = &base.a + DMatrix::from_row_slice(d, d, &v[d..]);
        SystemParams::new(x0, a).unwrap()
    })
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.abs().max()
}

pub fn d2() -> SystemParams {
    odeid::harness::preset_params("d2").unwrap()
}

pub fn d3() -> SystemParams {
    odeid::harness::preset_params("d3").unwrap()
}
