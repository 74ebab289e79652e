//! Acceptance suite. Each test prints one PASS/FAIL line per criterion:
//!
//! 1. conjugacy oracles for all ten full-conditional updates
//! 2. joint-distribution (Geweke-style) test on the small configuration
//! 3. latent-posterior equivalence against brute-force enumeration
//! 4. scaled parameter-table replication (desk-scale study)
//! 5. scaled area-mean-table replication (same runs)
//! 6. category-recovery levels and monotonicity
//! 7. perturbation operator transition frequencies
//! 8. Dirichlet misclassification-row update exactness
//! 9. byte-identical outputs for identical configurations
//!
//! Criteria 4-6 share one desk-scale scenario run (10 replicates, 2000
//! sweeps, burn 1000, thin 5, all four perturbation levels).

#![allow(clippy::needless_range_loop)]

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use once_cell::sync::Lazy;
use statrs::function::gamma::ln_gamma;

use sae_core::gibbs::{update_p_matrix, update_x};
use sae_core::model::{
    validate_dataset, HyperParams, ParamState, RawData, TransitionMatrix,
};
use sae_core::nalgebra::{DMatrix, DVector};
use sae_core::sim::{perturb_categories, run_scenario, ModelLabel, ScenarioConfig, ScenarioReport};
use sae_core::validate::{conjugacy_suite, geweke_suite};
use sae_core::RngStream;

const SCENARIO_SEED: u64 = 77;

static DESK_REPORT: Lazy<ScenarioReport> = Lazy::new(|| {
    let config = ScenarioConfig::desk_scale(SCENARIO_SEED);
    run_scenario(&config).expect("desk-scale scenario must run")
});

fn verdict(criterion: &str, passed: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} ({detail})",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_1_conjugacy_oracles() {
    let start = Instant::now();
    let report = conjugacy_suite(100_000, 20_260_401).expect("suite runs");
    let elapsed = start.elapsed().as_secs_f64();
    let n_failed = report.failures().len();
    let detail = format!(
        "{} checks, {} failed, {:.1}s",
        report.checks.len(),
        n_failed,
        elapsed
    );
    for failure in report.failures() {
        println!("  {failure}");
    }
    verdict("1 conjugacy", n_failed == 0 && elapsed < 120.0, &detail);
}

#[test]
fn criterion_2_joint_distribution() {
    let start = Instant::now();
    let report = geweke_suite(10_000, 20_260_402).expect("suite runs");
    let elapsed = start.elapsed().as_secs_f64();
    let max_z = report
        .checks
        .iter()
        .map(|c| c.observed.abs())
        .fold(0.0, f64::max);
    let n_failed = report.failures().len();
    let detail = format!(
        "10 z-scores, max |z| = {max_z:.2}, {} failed, {:.1}s",
        n_failed, elapsed
    );
    for failure in report.failures() {
        println!("  {failure}");
    }
    verdict("2 geweke", n_failed == 0 && elapsed < 300.0, &detail);
}

#[test]
fn criterion_3_enumeration_equivalence() {
    let start = Instant::now();

    // Eight units, two areas, frozen continuous blocks; x and P update.
    let y = [1.2, -0.4, 0.3, -1.8, 2.0, 0.1, -0.9, 0.6];
    let z = [1, 2, 1, 2, 1, 2, 2, 1];
    let area = [0, 0, 0, 0, 1, 1, 1, 1];
    let beta = [1.5, -1.5];
    let u = [0.2, -0.3];
    let sigma2_e = 1.0;
    let alpha = [[2.0, 1.0], [1.0, 2.0]];

    let data = validate_dataset(RawData {
        y: y.to_vec(),
        t: vec![],
        s: vec![],
        z: z.to_vec(),
        area: area.to_vec(),
        area_labels: vec!["a0".into(), "a1".into()],
        k: 2,
    })
    .unwrap();
    let hyper = HyperParams {
        alpha: alpha.iter().map(|r| r.to_vec()).collect(),
        ..HyperParams::flat(2, 0, 0)
    };

    // Gibbs over (x, P) only.
    let mut state = ParamState {
        beta: DVector::from_row_slice(&beta),
        delta: DVector::zeros(0),
        gamma: DVector::zeros(0),
        sigma2_e,
        sigma2_u: 1.0,
        sigma2_s: 1.0,
        u: u.to_vec(),
        p_matrix: TransitionMatrix::new(hyper.alpha_row_means()).unwrap(),
        x: z.to_vec(),
        w: DMatrix::zeros(8, 0),
    };
    let mut stream = RngStream::new(20_260_403);
    let burn = 5_000;
    let sweeps = 200_000;
    let mut counts = [0u64; 8];
    for it in 0..burn + sweeps {
        update_x(&mut state, &data, &mut stream).unwrap();
        update_p_matrix(&mut state, &data, &hyper, &mut stream).unwrap();
        if it >= burn {
            for (j, &x) in state.x.iter().enumerate() {
                if x == 1 {
                    counts[j] += 1;
                }
            }
        }
    }
    let gibbs_prob: Vec<f64> = counts.iter().map(|&c| c as f64 / sweeps as f64).collect();

    // Exact enumeration over all 2^8 latent configurations, with the
    // misclassification matrix integrated out analytically
    // (Dirichlet-multinomial marginal of z given x).
    let n = 8usize;
    let mut log_weights = Vec::with_capacity(1 << n);
    for mask in 0u32..(1 << n) {
        let x_of = |j: usize| -> usize {
            if mask & (1 << j) != 0 {
                2
            } else {
                1
            }
        };
        let mut logw = 0.0;
        for j in 0..n {
            let resid = y[j] - beta[x_of(j) - 1] - u[area[j]];
            logw += -resid * resid / (2.0 * sigma2_e);
        }
        // nu[r][c] = #(x = r+1, z = c+1)
        let mut nu = [[0.0f64; 2]; 2];
        for j in 0..n {
            nu[x_of(j) - 1][z[j] - 1] += 1.0;
        }
        for r in 0..2 {
            let a_total: f64 = alpha[r].iter().sum();
            let n_r: f64 = nu[r].iter().sum();
            logw += ln_gamma(a_total) - ln_gamma(a_total + n_r);
            for c in 0..2 {
                logw += ln_gamma(alpha[r][c] + nu[r][c]) - ln_gamma(alpha[r][c]);
            }
        }
        log_weights.push(logw);
    }
    let max_logw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max_logw).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut exact_prob = vec![0.0; n];
    for (mask, w) in weights.iter().enumerate() {
        for (j, p) in exact_prob.iter_mut().enumerate() {
            if mask & (1 << j) == 0 {
                *p += w / total;
            }
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let max_diff = gibbs_prob
        .iter()
        .zip(&exact_prob)
        .map(|(g, e)| (g - e).abs())
        .fold(0.0, f64::max);
    let detail = format!("max |gibbs - exact| = {max_diff:.4} over 8 units, {elapsed:.1}s");
    for j in 0..n {
        println!(
            "  unit {j}: gibbs {:.4}, exact {:.4}",
            gibbs_prob[j], exact_prob[j]
        );
    }
    verdict("3 enumeration", max_diff <= 0.01 && elapsed < 120.0, &detail);
}

fn find_row<'a>(
    report: &'a ScenarioReport,
    p: f64,
    parameter: &str,
    model: ModelLabel,
) -> &'a sae_core::sim::MetricsRow {
    report
        .parameter_table
        .iter()
        .find(|r| (r.p - p).abs() < 1e-12 && r.parameter == parameter && r.model == model)
        .expect("row present")
}

#[test]
fn criterion_4_scaled_parameter_table() {
    let start = Instant::now();
    let report = &*DESK_REPORT;
    let elapsed = start.elapsed().as_secs_f64();

    let prop_beta3_08 = find_row(report, 0.8, "beta3", ModelLabel::Prop);
    let prop_beta1_08 = find_row(report, 0.8, "beta1", ModelLabel::Prop);
    let naive_sigma_08 = find_row(report, 0.8, "sigma2_e", ModelLabel::Naive);
    let naive_beta3_08 = find_row(report, 0.8, "beta3", ModelLabel::Naive);
    let naive_sigma_05 = find_row(report, 0.5, "sigma2_e", ModelLabel::Naive);
    let prop_beta1_05 = find_row(report, 0.5, "beta1", ModelLabel::Prop);

    let checks = [
        (
            "p=0.8 Prop beta3 within ±2 of -10",
            (prop_beta3_08.est + 10.0).abs() <= 2.0,
            format!("est {:.3}", prop_beta3_08.est),
        ),
        (
            "p=0.8 Prop beta1 within ±2 of 50",
            (prop_beta1_08.est - 50.0).abs() <= 2.0,
            format!("est {:.3}", prop_beta1_08.est),
        ),
        (
            "p=0.8 Naive sigma2_e > 300",
            naive_sigma_08.est > 300.0,
            format!("est {:.1}", naive_sigma_08.est),
        ),
        (
            "p=0.8 Naive beta3 coverage < 0.4",
            naive_beta3_08.coverage < 0.4,
            format!("coverage {:.2}", naive_beta3_08.coverage),
        ),
        (
            "p=0.5 Naive sigma2_e > 450",
            naive_sigma_05.est > 450.0,
            format!("est {:.1}", naive_sigma_05.est),
        ),
        (
            "p=0.5 Prop beta1 |RB| < 0.05",
            prop_beta1_05.rb.abs() < 0.05,
            format!("RB {:.4}", prop_beta1_05.rb),
        ),
    ];
    let mut all = true;
    for (name, ok, detail) in &checks {
        println!("  {}: {name} ({detail})", if *ok { "ok" } else { "FAIL" });
        all &= ok;
    }
    verdict(
        "4 scaled parameter table",
        all && elapsed < 1800.0,
        &format!("6 thresholds, scenario ran in {elapsed:.0}s"),
    );
}

#[test]
fn criterion_5_scaled_area_table() {
    let report = &*DESK_REPORT;
    let config = &report.config;

    let mean_over_areas = |p: f64, model: ModelLabel, f: &dyn Fn(&sae_core::sim::AreaMetricsRow) -> f64| -> f64 {
        let rows: Vec<f64> = report
            .area_table
            .iter()
            .filter(|r| (r.p - p).abs() < 1e-12 && r.model == model)
            .map(f)
            .collect();
        assert_eq!(rows.len(), config.m);
        rows.iter().sum::<f64>() / rows.len() as f64
    };

    let mut ordering_ok = true;
    for &p in &config.p_levels {
        let rmse_true = mean_over_areas(p, ModelLabel::True, &|r| r.rmse_x100);
        let rmse_prop = mean_over_areas(p, ModelLabel::Prop, &|r| r.rmse_x100);
        let rmse_naive = mean_over_areas(p, ModelLabel::Naive, &|r| r.rmse_x100);
        let ok = rmse_true <= rmse_prop && rmse_prop <= rmse_naive;
        println!(
            "  p={p}: RMSEx100 True {rmse_true:.2} <= Prop {rmse_prop:.2} <= Naive {rmse_naive:.2}: {}",
            if ok { "ok" } else { "FAIL" }
        );
        ordering_ok &= ok;
    }

    let mut cov_prop = 0.0;
    let mut cov_naive = 0.0;
    for &p in &config.p_levels {
        cov_prop += mean_over_areas(p, ModelLabel::Prop, &|r| r.coverage);
        cov_naive += mean_over_areas(p, ModelLabel::Naive, &|r| r.coverage);
    }
    cov_prop /= config.p_levels.len() as f64;
    cov_naive /= config.p_levels.len() as f64;
    let gap = cov_prop - cov_naive;
    println!("  mean theta coverage: Prop {cov_prop:.3} vs Naive {cov_naive:.3} (gap {gap:.3})");

    verdict(
        "5 scaled area table",
        ordering_ok && gap >= 0.3,
        &format!("RMSE ordering at every p, coverage gap {gap:.3} >= 0.3"),
    );
}

#[test]
fn criterion_6_category_recovery() {
    let report = &*DESK_REPORT;
    let rates: Vec<(f64, f64)> = report.recovery.iter().map(|r| (r.p, r.rate)).collect();
    let monotone = rates.windows(2).all(|w| w[0].1 <= w[1].1);
    let p08 = rates
        .iter()
        .find(|(p, _)| (*p - 0.8).abs() < 1e-12)
        .map(|(_, rate)| *rate)
        .expect("p=0.8 present");
    let detail = format!(
        "rates {}, p=0.8 rate {:.3} >= 0.81",
        rates
            .iter()
            .map(|(p, r)| format!("{p}:{r:.3}"))
            .collect::<Vec<_>>()
            .join(" "),
        p08
    );
    verdict("6 recovery", monotone && p08 >= 0.85 - 0.04, &detail);
}

#[test]
fn criterion_7_perturbation_operator() {
    let n = 1_000_000usize;
    let k = 3usize;
    let p = 0.8;
    let mut stream = RngStream::new(20_260_407);
    let x: Vec<usize> = (0..n).map(|_| stream.draw_uniform_int(1, k)).collect();
    let z = perturb_categories(&x, p, k, &mut stream).unwrap();

    let mut counts = vec![vec![0.0f64; k]; k];
    let mut row_totals = vec![0.0f64; k];
    for (a, b) in x.iter().zip(&z) {
        counts[a - 1][b - 1] += 1.0;
        row_totals[a - 1] += 1.0;
    }
    let mut max_err: f64 = 0.0;
    for r in 0..k {
        for c in 0..k {
            let expect = if r == c { p } else { (1.0 - p) / (k - 1) as f64 };
            let got = counts[r][c] / row_totals[r];
            max_err = max_err.max((got - expect).abs());
        }
    }
    verdict(
        "7 perturbation",
        max_err < 0.005,
        &format!("max entrywise error {max_err:.5} over 10^6 units"),
    );
}

#[test]
fn criterion_8_dirichlet_row_exactness() {
    // Frozen latent categories with an empty row included.
    let x = vec![1, 1, 1, 1, 1, 1, 2, 2, 2, 1];
    let z = vec![1, 1, 2, 1, 3, 1, 2, 2, 3, 1];
    let k = 3;
    let data = validate_dataset(RawData {
        y: vec![0.0; x.len()],
        t: vec![],
        s: vec![],
        z: z.clone(),
        area: vec![0; x.len()],
        area_labels: vec!["a".into()],
        k,
    })
    .unwrap();
    let hyper = HyperParams::flat(k, 0, 0);
    let state = ParamState {
        beta: DVector::zeros(k),
        delta: DVector::zeros(0),
        gamma: DVector::zeros(0),
        sigma2_e: 1.0,
        sigma2_u: 1.0,
        sigma2_s: 1.0,
        u: vec![0.0],
        p_matrix: TransitionMatrix::identity(k),
        x: x.clone(),
        w: DMatrix::zeros(x.len(), 0),
    };

    let reps = 100_000usize;
    let mut stream = RngStream::new(20_260_408);
    let mut sums = vec![vec![0.0f64; k]; k];
    for _ in 0..reps {
        let mut s = state.clone();
        update_p_matrix(&mut s, &data, &hyper, &mut stream).unwrap();
        for r in 0..k {
            for c in 0..k {
                sums[r][c] += s.p_matrix.prob(r + 1, c + 1);
            }
        }
    }

    let mut nu = vec![vec![0.0f64; k]; k];
    for (xx, zz) in x.iter().zip(&z) {
        nu[xx - 1][zz - 1] += 1.0;
    }
    let mut max_ratio: f64 = 0.0;
    for r in 0..k {
        let alpha_post: Vec<f64> = hyper.alpha[r].iter().zip(&nu[r]).map(|(a, c)| a + c).collect();
        let total: f64 = alpha_post.iter().sum();
        for c in 0..k {
            let expect = alpha_post[c] / total;
            let se = (expect * (1.0 - expect) / (total + 1.0) / reps as f64).sqrt();
            let got = sums[r][c] / reps as f64;
            max_ratio = max_ratio.max((got - expect).abs() / se);
        }
    }
    verdict(
        "8 dirichlet exactness",
        max_ratio <= 3.0,
        &format!("max |error|/SE = {max_ratio:.2} over {} entries at 10^5 draws", k * k),
    );
}

fn run_sae(args: &[&str], extra: &[(&str, &Path)]) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sae"));
    cmd.env_remove("SAE_OUT_DIR");
    cmd.args(args);
    for (flag, path) in extra {
        cmd.arg(flag).arg(path);
    }
    cmd.output().expect("binary runs")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_9_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();

    // simulate: a small but complete run, twice.
    let sim_args = [
        "simulate",
        "--desk",
        "--replicates",
        "2",
        "--areas",
        "5",
        "--n-min",
        "3",
        "--n-max",
        "10",
        "--iters",
        "300",
        "--burn",
        "150",
        "--thin",
        "5",
        "--p-levels",
        "0.5,0.8",
        "--seed",
        "123",
    ];
    let sim_a = tmp.path().join("sim-a");
    let sim_b = tmp.path().join("sim-b");
    for (dir, _) in [(&sim_a, 0), (&sim_b, 1)] {
        let out = run_sae(&sim_args, &[("--out", dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let sim_identical = dir_bytes(&sim_a) == dir_bytes(&sim_b);

    // fit on a small synthetic CSV, twice.
    let csv = tmp.path().join("toy.csv");
    let mut text = String::from("y,area,z\n");
    for j in 0..30 {
        let z = 1 + j % 3;
        let y = [10.0, 0.0, -10.0][z - 1] + ((j * 37 % 11) as f64 - 5.0) / 3.0;
        text.push_str(&format!("{y},area{},{z}\n", j % 4));
    }
    fs::write(&csv, text).unwrap();
    let fit_a = tmp.path().join("fit-a");
    let fit_b = tmp.path().join("fit-b");
    for dir in [&fit_a, &fit_b] {
        let out = run_sae(
            &[
                "fit",
                "--roles",
                "y=y,area=area,z=z",
                "--iters",
                "400",
                "--burn",
                "200",
                "--thin",
                "4",
                "--seed",
                "321",
            ],
            &[("--data", &csv), ("--out", dir)],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let fit_identical = dir_bytes(&fit_a) == dir_bytes(&fit_b);

    verdict(
        "9 reproducibility",
        sim_identical && fit_identical,
        &format!("simulate identical: {sim_identical}, fit identical: {fit_identical}"),
    );
}
