//! One PASS/FAIL line per acceptance criterion.
//!
//! Lines go straight to stdout so they show up under the default output
//! capture. A FAIL only fails the test when `ODEID_STRICT_ACCEPTANCE` is
//! set; the Monte-Carlo studies run in a few minutes with optimizations.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::{identifiable_system, jittered, max_abs};
use nalgebra::{DMatrix, DVector};
use odeid::degraded::{forward_params, g_gradient, g_map, time_scale, DegradedSpec};
use odeid::harness::{
    run_experiment, DegradeMode, ExperimentConfig, ExperimentOutput, MetricsSummary, Preset, STUDY_SAMPLE_SIZES,
};
use odeid::identifiability::{recover_exact, ToleranceSet};
use odeid::inference::{h_matrix, sandwich, v_matrix, CovariancePath, DEFAULT_PANELS};
use odeid::linalg::expm;
use odeid::model::{simulate_observations, trajectory};
use odeid::nls::{dexpm_da, gradient, objective};
use odeid::special::{chi2_quantile, normal_quantile};
use odeid::{Matrix, Noise, NoiseSpec, ObsLabel, ObservationSet, ThetaVec};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{RngAlgorithm, TestRng, TestRunner};

fn report(criterion: &str, checks: &[(bool, String)]) {
    let pass = checks.iter().all(|(ok, _)| *ok);
    let mut out = std::io::stdout().lock();
    writeln!(out, "{} {criterion}", if pass { "PASS" } else { "FAIL" }).unwrap();
    for (ok, detail) in checks {
        writeln!(out, "    [{}] {detail}", if *ok { "ok" } else { "x" }).unwrap();
    }
    drop(out);
    if !pass && std::env::var_os("ODEID_STRICT_ACCEPTANCE").is_some() {
        panic!("acceptance criterion failed: {criterion}");
    }
}

/// `count` reproducible draws from a strategy.
fn draw<S: Strategy>(strategy: &S, count: usize) -> Vec<S::Value> {
    let mut runner = TestRunner::new_with_rng(common::config(100_000), TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    (0..count)
        .map(|_| strategy.new_tree(&mut runner).expect("generator exhausted").current())
        .collect()
}

fn sup(v: &ThetaVec) -> f64 {
    v.to_dvector().amax()
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    max_abs(&(a - b)) / max_abs(b)
}

#[test]
fn exact_recovery() {
    let dts = [0.05, 0.2, 1.0];
    let systems = draw(&identifiable_system(2..=5, -1.5, 1.5, 0.05), 500);
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for (i, params) in systems.iter().enumerate() {
        let dt = dts[i % 3];
        let d = params.dim();
        let times: Vec<f64> = (0..=d).map(|m| m as f64 * dt).collect();
        let obs = ObservationSet::new(0.0, dt, trajectory(params, &times).unwrap(), ObsLabel::NoiseFree).unwrap();
        match recover_exact(&obs, &ToleranceSet::default()) {
            Ok(back) => {
                let theta = params.pack();
                let err = (back.pack().to_dvector() - theta.to_dvector()).amax() / (1.0 + sup(&theta));
                worst = worst.max(err);
            }
            Err(_) => failures += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "exact recovery on 500 identifiable systems, d in 2..5",
        &[
            (failures == 0, format!("{failures} recoveries failed")),
            (worst <= 1e-7, format!("max error / (1 + |theta|) = {worst:.2e} (limit 1e-7)")),
            (secs <= 10.0, format!("runtime {secs:.2} s (limit 10 s)")),
        ],
    );
}

#[test]
fn gradient_correctness() {
    let instances = draw(
        &(identifiable_system(1..=4, -1.5, 1.5, 1e-3), 5usize..60, 0u64..u64::MAX, 0.0..2.0f64).prop_flat_map(
            |(p, n, seed, t)| {
                let len = p.pack().len();
                proptest::collection::vec(-0.5..0.5f64, len).prop_map(move |off| (p.clone(), n, seed, t, off))
            },
        ),
        200,
    );
    let start = Instant::now();
    let h = 1e-6;
    let (mut worst_grad, mut worst_z) = (0.0f64, 0.0f64);
    for (params, n, seed, t, offset) in &instances {
        let d = params.dim();
        let noise = Noise::Gaussian(NoiseSpec::isotropic(d, 0.1, *seed).unwrap());
        let obs = simulate_observations(params, *n, 1.0, &noise).unwrap();
        let theta = params.pack().map(|i, v| v + offset[i]);
        let g = gradient(&theta, &obs).unwrap();
        let scale = sup(&g).max(1.0);
        for c in 0..theta.len() {
            let at = |s: f64| objective(&theta.map(|i, v| if i == c { v + s } else { v }), &obs).unwrap();
            let fd = (at(h) - at(-h)) / (2.0 * h);
            worst_grad = worst_grad.max((g[c] - fd).abs() / scale);
        }
        let a = theta.unpack().unwrap().a;
        for j in 0..d {
            for k in 0..d {
                let z = dexpm_da(&a, *t, j, k).unwrap();
                let step = |s: f64| {
                    let mut b = a.clone();
                    b[(j, k)] += s;
                    expm(&(b * *t)).unwrap()
                };
                let fd = (step(h) - step(-h)) / (2.0 * h);
                worst_z = worst_z.max(max_abs(&(&z - fd)) / max_abs(&z).max(1.0));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "gradient and dexpm_da against central differences on 200 instances",
        &[
            (worst_grad <= 1e-5, format!("gradient max relative gap {worst_grad:.2e} (limit 1e-5)")),
            (worst_z <= 1e-5, format!("dexpm_da max relative gap {worst_z:.2e} (limit 1e-5)")),
            (secs <= 30.0, format!("runtime {secs:.2} s (limit 30 s)")),
        ],
    );
}

/// `(∫e^{2at}, ∫t e^{2at}, ∫t² e^{2at})` over `[0, T]`.
fn scalar_moments(a: f64, t: f64) -> [f64; 3] {
    let b = 2.0 * a;
    let e = (b * t).exp();
    [
        (e - 1.0) / b,
        e * (t / b - 1.0 / (b * b)) + 1.0 / (b * b),
        e * (t * t / b - 2.0 * t / (b * b) + 2.0 / (b * b * b)) - 2.0 / (b * b * b),
    ]
}

#[test]
fn covariance_structure() {
    let systems = draw(&(identifiable_system(1..=4, -1.5, 1.5, 1e-3), 0.5..3.0f64), 500);
    let (mut pd, mut sym, mut lowest, mut worst_ratio) = (true, 0.0f64, f64::INFINITY, 0.0f64);
    for (params, t_end) in &systems {
        let theta = params.pack();
        let sigma = vec![0.0025; params.dim()];
        let h = h_matrix(&theta, *t_end, DEFAULT_PANELS).unwrap();
        let v = v_matrix(&theta, *t_end, &sigma, DEFAULT_PANELS).unwrap();
        for m in [&h, &v] {
            sym = sym.max(max_abs(&(m - m.transpose())) / max_abs(m));
            pd &= m.clone().cholesky().is_some();
            lowest = lowest.min(m.clone().symmetric_eigen().eigenvalues.min());
        }
        worst_ratio = worst_ratio.max(rel(&v, &(&h * (2.0 * 0.0025))));
    }

    let mut worst_scalar = 0.0f64;
    for (x0, a, t_end, s2) in [(1.0, -0.7, 1.0, 0.01), (0.4, 1.3, 2.0, 0.5), (-2.0, 0.2, 5.0, 1.0), (1.5, -3.0, 10.0, 0.1)] {
        let theta = ThetaVec::new(vec![x0, a]).unwrap();
        let [m0, m1, m2] = scalar_moments(a, t_end);
        let exact = DMatrix::from_row_slice(2, 2, &[m0, x0 * m1, x0 * m1, x0 * x0 * m2]) * (2.0 / t_end);
        let h = h_matrix(&theta, t_end, DEFAULT_PANELS).unwrap();
        let v = v_matrix(&theta, t_end, &[s2], DEFAULT_PANELS).unwrap();
        worst_scalar = worst_scalar.max(rel(&h, &exact)).max(rel(&v, &(&exact * (2.0 * s2))));
    }

    let fast = draw(&(identifiable_system(1..=3, -3.0, 3.0, 1e-3), 0.5..10.0f64), 100);
    let mut worst_doubling = 0.0f64;
    for (params, t_end) in &fast {
        let theta = params.pack();
        let sigma = vec![0.0025; params.dim()];
        let pair = |p| (h_matrix(&theta, *t_end, p).unwrap(), v_matrix(&theta, *t_end, &sigma, p).unwrap());
        let ((h1, v1), (h2, v2)) = (pair(DEFAULT_PANELS), pair(2 * DEFAULT_PANELS));
        worst_doubling = worst_doubling.max(rel(&h1, &h2)).max(rel(&v1, &v2));
    }
    report(
        "sensitivity and covariance structure",
        &[
            (pd && lowest > 0.0, format!("H and V positive definite at 500 systems, smallest eigenvalue {lowest:.2e}")),
            (sym <= 1e-10, format!("relative asymmetry {sym:.1e}")),
            (worst_ratio <= 1e-10, format!("isotropic V vs 2 sigma^2 H: {worst_ratio:.1e} (limit 1e-10)")),
            (worst_scalar <= 1e-8, format!("d = 1 closed forms: {worst_scalar:.1e} (limit 1e-8)")),
            (worst_doubling < 1e-9, format!("panel doubling, T <= 10, spectra in [-3, 3]: {worst_doubling:.1e} (limit 1e-9)")),
        ],
    );
}

#[test]
fn degraded_algebra() {
    let systems = draw(&identifiable_system(2..=4, -1.5, 1.5, 1e-3), 200);
    let specs = [
        DegradedSpec::aggregated(5, 0.01).unwrap(),
        DegradedSpec::aggregated(2, 0.1).unwrap(),
        DegradedSpec::time_scaled(0.01).unwrap(),
        DegradedSpec::time_scaled(10.0).unwrap(),
    ];
    let mut worst_inverse = 0.0f64;
    for (i, params) in systems.iter().enumerate() {
        let spec = &specs[i % specs.len()];
        let theta = params.pack();
        let back = g_map(&forward_params(params, spec).unwrap().pack(), spec).unwrap();
        worst_inverse = worst_inverse.max((back.to_dvector() - theta.to_dvector()).amax() / (1.0 + sup(&theta)));
    }

    let mut worst_jacobian = 0.0f64;
    for params in draw(&jittered(common::d3(), 0.3), 50) {
        for spec in &specs {
            let tilde = forward_params(&params, spec).unwrap().pack();
            let g = g_gradient(&tilde, spec).unwrap();
            for c in 0..tilde.len() {
                let at = |s: f64| g_map(&tilde.map(|i, v| if i == c { v + s } else { v }), spec).unwrap().to_dvector();
                let fd: DVector<f64> = (at(1e-6) - at(-1e-6)) / 2e-6;
                worst_jacobian = worst_jacobian.max((&fd - g.column(c)).amax());
            }
        }
    }

    let mut worst_unit = 0.0f64;
    for params in &systems[..50] {
        let theta = params.pack();
        let sigma = vec![0.0025; params.dim()];
        let base = sandwich(&theta, 1.0, &sigma, CovariancePath::Original, DEFAULT_PANELS).unwrap();
        for path in [CovariancePath::Aggregated { k: 1, n: 200 }, CovariancePath::TimeScaled { k: 1.0 }] {
            let other = sandwich(&theta, 1.0, &sigma, path, DEFAULT_PANELS).unwrap();
            worst_unit = worst_unit.max(rel(&other.sigma_n, &base.sigma_n));
        }
    }

    let mut worst_objective = 0.0f64;
    for (i, params) in systems[..100].iter().enumerate() {
        let d = params.dim();
        let noise = Noise::Gaussian(NoiseSpec::isotropic(d, 0.1, i as u64).unwrap());
        let obs = simulate_observations(params, 50, 1.0, &noise).unwrap();
        let theta = params.pack().map(|j, v| v + 0.01 * ((j * 7 + i) % 5) as f64);
        for k in [0.01, 0.1, 10.0, 100.0] {
            let spec = DegradedSpec::time_scaled(k).unwrap();
            let tilde = forward_params(&theta.unpack().unwrap(), &spec).unwrap().pack();
            let m = objective(&theta, &obs).unwrap();
            let m_tilde = objective(&tilde, &time_scale(&obs, k).unwrap()).unwrap();
            worst_objective = worst_objective.max((m - m_tilde).abs() / m.max(1.0));
        }
    }
    report(
        "degraded-observation algebra",
        &[
            (worst_inverse <= 1e-10, format!("g after forward map: {worst_inverse:.1e} (limit 1e-10)")),
            (worst_jacobian <= 1e-6, format!("g Jacobian vs differences: {worst_jacobian:.1e} (limit 1e-6)")),
            (worst_unit <= 1e-10, format!("k = 1 sandwich vs original: {worst_unit:.1e} (limit 1e-10)")),
            (worst_objective <= 1e-12, format!("time-scaled objective identity: {worst_objective:.1e} (limit 1e-12)")),
        ],
    );
}

fn study(preset: Preset, replications: usize, degrade: Option<DegradeMode>, sizes: &[usize]) -> ExperimentOutput {
    let config = ExperimentConfig {
        replications,
        degrade,
        ..ExperimentConfig::study(preset, sizes.to_vec())
    };
    run_experiment(&config).unwrap()
}

fn d3_study() -> &'static ExperimentOutput {
    static OUT: OnceLock<ExperimentOutput> = OnceLock::new();
    OUT.get_or_init(|| study(Preset::D3, 200, None, &STUDY_SAMPLE_SIZES))
}

fn rows_line(summary: &MetricsSummary) -> String {
    summary
        .rows
        .iter()
        .map(|r| format!("n={} mse={:.4} cr={:.1}", r.n, r.mse, r.within_cr_rate))
        .collect::<Vec<_>>()
        .join(", ")
}

#[test]
fn table_original_observations() {
    let summary = &d3_study().summary;
    let row = |n| summary.row(n).unwrap();
    let mut checks = vec![
        (
            (0.035..=0.060).contains(&row(1000).mse),
            format!("n=1000 MSE {:.4} in [0.035, 0.060]", row(1000).mse),
        ),
        (
            (0.017..=0.030).contains(&row(2000).mse),
            format!("n=2000 MSE {:.4} in [0.017, 0.030]", row(2000).mse),
        ),
        (
            row(2000).type2_at(3, 3).unwrap() <= 2.0,
            format!("n=2000 type II(a33) {:.1}% <= 2%", row(2000).type2_at(3, 3).unwrap()),
        ),
    ];
    for r in &summary.rows {
        checks.push((
            (90.5..=98.5).contains(&r.within_cr_rate),
            format!("n={} within-CR rate {:.1}% in [90.5, 98.5]", r.n, r.within_cr_rate),
        ));
        if r.n >= 500 {
            for e in &r.type1 {
                checks.push((
                    (1.0..=10.0).contains(&e.rate),
                    format!("n={} type I(a{}{}) {:.1}% in [1, 10]", r.n, e.j, e.k, e.rate),
                ));
            }
        }
    }
    checks.push((summary.rows.iter().all(|r| r.failures == 0), rows_line(summary)));
    report("d = 3 study on original observations", &checks);
}

#[test]
fn table_aggregated_observations() {
    let agg = study(Preset::D3, 200, Some(DegradeMode::Aggregated { k: 5 }), &[100, 2000]);
    let small = agg.summary.row(100).unwrap();
    let large = agg.summary.row(2000).unwrap();
    let original = d3_study().summary.row(2000).unwrap().mse;
    report(
        "d = 3 study on aggregated observations, k = 5",
        &[
            (
                (0.017..=0.030).contains(&large.mse),
                format!("n=2000 (n~=400) MSE {:.4} in [0.017, 0.030]", large.mse),
            ),
            (
                large.type2_at(3, 3).unwrap() <= 2.0,
                format!("n=2000 type II(a33) {:.1}% <= 2%", large.type2_at(3, 3).unwrap()),
            ),
            (
                (small.mse / 0.498 - 1.0).abs() <= 0.35,
                format!("n=100 (n~=20) MSE {:.4} within 35% of 0.498", small.mse),
            ),
            (
                (large.mse - original).abs() <= 0.005,
                format!("n=2000 MSE {:.4} vs original {:.4}, gap <= 0.005", large.mse, original),
            ),
        ],
    );
}

#[test]
fn table_time_scaled_observations() {
    let ks = [0.01, 0.1, 1.0, 10.0, 100.0];
    let runs: Vec<ExperimentOutput> = ks
        .iter()
        .map(|&k| study(Preset::D3, 200, Some(DegradeMode::TimeScaled { k }), &STUDY_SAMPLE_SIZES))
        .collect();
    let mut mse_gap = 0.0f64;
    let mut same_rates = true;
    for run in &runs[1..] {
        for (a, b) in run.summary.rows.iter().zip(&runs[0].summary.rows) {
            mse_gap = mse_gap.max((a.mse - b.mse).abs());
            same_rates &= a.within_cr_rate == b.within_cr_rate
                && a.type1 == b.type1
                && a.type2 == b.type2
                && a.replications_used == b.replications_used;
        }
    }
    report(
        "time-scaled study, k in {0.01, 0.1, 1, 10, 100}",
        &[
            (mse_gap <= 1e-4, format!("largest pairwise MSE gap {mse_gap:.1e} (limit 1e-4)")),
            (same_rates, "coverage and edge-test rates identical across k".to_string()),
        ],
    );
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[test]
fn figure_trends() {
    let d2 = study(Preset::D2, 100, None, &STUDY_SAMPLE_SIZES);
    let d4 = study(Preset::D4, 100, None, &STUDY_SAMPLE_SIZES);
    let mse = |o: &ExperimentOutput| o.summary.rows.iter().map(|r| r.mse).collect::<Vec<_>>();
    let a42: Vec<f64> = d4.summary.rows.iter().map(|r| r.type2_at(4, 2).unwrap()).collect();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    report(
        "trends for d = 2 and d = 4 over n in {100, 200, 500, 1000, 2000}",
        &[
            (strictly_decreasing(&mse(&d2)), format!("d=2 MSE strictly decreasing: {}", fmt(&mse(&d2)))),
            (strictly_decreasing(&mse(&d4)), format!("d=4 MSE strictly decreasing: {}", fmt(&mse(&d4)))),
            (a42[0] > 50.0, format!("d=4 type II(a42) at n=100 is {:.1}% > 50%", a42[0])),
            (
                a42.windows(2).all(|w| w[1] <= w[0]) && a42[a42.len() - 1] < a42[0],
                format!("d=4 type II(a42) decreasing in n: {}", fmt(&a42)),
            ),
        ],
    );
}

#[test]
fn quantile_fixtures() {
    let chi2 = chi2_quantile(12, 0.95).unwrap();
    let z = normal_quantile(0.975).unwrap();
    report(
        "quantile fixtures",
        &[
            ((chi2 - 21.02607).abs() <= 1e-4, format!("chi2_quantile(12, 0.95) = {chi2:.6}")),
            ((z - 1.959964).abs() <= 1e-6, format!("normal_quantile(0.975) = {z:.7}")),
        ],
    );
}
