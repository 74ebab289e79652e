//! Output writers. Every file is plain CSV (or key=value for the manifest)
//! with full-precision numbers, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sae_core::gibbs::ChainOutput;
use sae_core::predict::{CategoryRecovery, PosteriorSummary};
use sae_core::sim::ScenarioReport;
use sae_core::Dataset;

use crate::ingest::CodingTables;

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Create the output directory and prove it is writable before any sampling
/// starts, so a failed run never leaves partial outputs behind.
pub fn preflight(outdir: &Path) -> Result<()> {
    fs::create_dir_all(outdir)
        .with_context(|| format!("cannot create output directory {}", outdir.display()))?;
    let probe = outdir.join(".write-probe");
    fs::write(&probe, b"probe")
        .with_context(|| format!("output directory {} is not writable", outdir.display()))?;
    fs::remove_file(&probe).ok();
    Ok(())
}

pub fn params_csv(rows: &[(String, PosteriorSummary)]) -> String {
    let mut out = String::from("parameter,mean,sd,lower,upper\n");
    for (name, s) in rows {
        let _ = writeln!(out, "{name},{},{},{},{}", s.mean, s.sd, s.lower, s.upper);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn area_means_csv(
    data: &Dataset,
    plain: &[PosteriorSummary],
    with_u: &[PosteriorSummary],
) -> String {
    let mut out = String::from(
        "area,n_units,mean,sd,lower,upper,mean_with_u,sd_with_u,lower_with_u,upper_with_u\n",
    );
    for i in 0..data.n_areas() {
        let a = &plain[i];
        let b = &with_u[i];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            data.area_label(i),
            data.area_units(i).len(),
            a.mean,
            a.sd,
            a.lower,
            a.upper,
            b.mean,
            b.sd,
            b.lower,
            b.upper
        );
    }
    out
}

/// Posterior mean and sd of every misclassification matrix entry.
pub fn p_matrix_csv(chain: &ChainOutput, k: usize) -> String {
    let mut out = String::from("true_category,observed_category,mean,sd\n");
    let n = chain.len() as f64;
    for row in 1..=k {
        for col in 1..=k {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for state in &chain.states {
                let v = state.p_matrix.prob(row, col);
                sum += v;
                sum_sq += v * v;
            }
            let mean = sum / n;
            let var = if chain.len() > 1 {
                ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            let _ = writeln!(out, "{row},{col},{mean},{}", var.sqrt());
        }
    }
    out
}

pub fn recovery_csv(data: &Dataset, coding: &CodingTables, rec: &CategoryRecovery) -> String {
    let k = rec.probabilities.first().map_or(0, Vec::len);
    let mut out = String::from("unit,area,observed,modal");
    for c in 1..=k {
        let _ = write!(out, ",prob_{c}");
    }
    out.push('\n');
    for j in 0..data.n_units() {
        let _ = write!(
            out,
            "{j},{},{},{}",
            data.area_label(data.area()[j]),
            coding.z_levels[data.z()[j] - 1],
            coding.z_levels[rec.modal[j] - 1]
        );
        for c in 0..k {
            let _ = write!(out, ",{}", rec.probabilities[j][c]);
        }
        out.push('\n');
    }
    out
}

pub fn coding_csv(coding: &CodingTables) -> String {
    let mut out = String::from("code,value\n");
    for (i, level) in coding.z_levels.iter().enumerate() {
        let _ = writeln!(out, "{},{level}", i + 1);
    }
    out
}

pub fn loglik_csv(chain: &ChainOutput) -> String {
    let mut out = String::from("draw,log_likelihood\n");
    for (i, ll) in chain.log_likelihood.iter().enumerate() {
        let _ = writeln!(out, "{i},{ll}");
    }
    out
}

/// Parameter comparison table (p, parameter, model, Est, RB, RMSE, Cov).
pub fn table1_csv(report: &ScenarioReport) -> String {
    let mut out = String::from("p,parameter,model,Est,RB,RMSE,Cov\n");
    for row in &report.parameter_table {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.p, row.parameter, row.model, row.est, row.rb, row.rmse, row.coverage
        );
    }
    out
}

/// Small-area mean table (area, p, model, RMSE×100, coverage).
pub fn table2_csv(report: &ScenarioReport) -> String {
    let mut out = String::from("area,p,model,RMSEx100,Cov\n");
    for row in &report.area_table {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.area, row.p, row.model, row.rmse_x100, row.coverage
        );
    }
    out
}

pub fn recovery_rates_csv(report: &ScenarioReport) -> String {
    let mut out = String::from("p,recovery_rate\n");
    for row in &report.recovery {
        let _ = writeln!(out, "{},{}", row.p, row.rate);
    }
    out
}
