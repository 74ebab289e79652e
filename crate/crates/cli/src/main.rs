//! `sae`: fit the unit-level measurement-error small area model to CSV data,
//! run the estimator-comparison simulation study, or run the sampler
//! correctness suites.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sae_core::gibbs::{run_chain, ChainConfig, ChainOutput};
use sae_core::model::{patterned_alpha, HyperParams, ModelMode, ParamState};
use sae_core::predict::{
    predict_area_means, recover_categories, summarize, AreaPopulationSummary, PosteriorSummary,
};
use sae_core::sim::{run_scenario, ScenarioConfig};
use sae_core::validate::{conjugacy_suite, geweke_suite};
use sae_core::Dataset;

use sae_cli::config::{self, FileConfig, FloatList};
use sae_cli::ingest::{self, ColumnRoles};
use sae_cli::output;

#[derive(Parser)]
#[command(
    name = "sae",
    version,
    about = "Unit-level small area estimation with misclassified and mismeasured covariates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a CSV dataset
    Fit(FitArgs),
    /// Run the three-estimator simulation study
    Simulate(SimulateArgs),
    /// Run the sampler-correctness suites; nonzero exit on failure
    Validate(ValidateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV file with a header row
    #[arg(long)]
    data: Option<PathBuf>,
    /// Column roles, e.g. `y=bmi,area=region,z=wealth,t=age+parity,s=height`
    #[arg(long)]
    roles: Option<String>,
    /// `proposed` (latent-variable model) or `naive`
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    /// Burn-in sweeps (default: half of --iters)
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Credible level for all intervals
    #[arg(long)]
    level: Option<f64>,
    /// Known variance of the latent continuous covariates
    #[arg(long = "sigma2-w")]
    sigma2_w: Option<f64>,
    /// Prior variance of every regression coefficient
    #[arg(long = "prior-var")]
    prior_var: Option<f64>,
    #[arg(long = "a-e")]
    a_e: Option<f64>,
    #[arg(long = "b-e")]
    b_e: Option<f64>,
    #[arg(long = "a-u")]
    a_u: Option<f64>,
    #[arg(long = "b-u")]
    b_u: Option<f64>,
    #[arg(long = "a-s")]
    a_s: Option<f64>,
    #[arg(long = "b-s")]
    b_s: Option<f64>,
    /// Dirichlet prior mass on the diagonal of each row
    #[arg(long = "alpha-diag")]
    alpha_diag: Option<f64>,
    /// Dirichlet prior mass on the adjacent categories
    #[arg(long = "alpha-neighbor")]
    alpha_neighbor: Option<f64>,
    /// key = value file; command-line flags win on conflict
    #[arg(long = "config-file")]
    config_file: Option<PathBuf>,
    /// Output directory (falls back to SAE_OUT_DIR)
    #[arg(long, env = "SAE_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Resolve the configuration and write the manifest without running
    #[arg(long = "dry-run")]
    dry_run: bool,
    /// Perturbation levels, e.g. `0.5,0.6,0.7,0.8`
    #[arg(long = "p-levels")]
    p_levels: Option<FloatList>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    areas: Option<usize>,
    #[arg(long = "categories", visible_alias = "K")]
    categories: Option<usize>,
    #[arg(long = "n-min")]
    n_min: Option<usize>,
    #[arg(long = "n-max")]
    n_max: Option<usize>,
    /// True regression coefficients, e.g. `50,5,-10`
    #[arg(long)]
    beta: Option<FloatList>,
    #[arg(long = "sigma2-e")]
    sigma2_e: Option<f64>,
    #[arg(long = "sigma2-u")]
    sigma2_u: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Burn-in sweeps (default: half of --iters)
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    level: Option<f64>,
    /// Desk-scale defaults (10 replicates, 2000 sweeps) instead of the full study
    #[arg(long)]
    desk: bool,
    #[arg(long = "config-file")]
    config_file: Option<PathBuf>,
    /// Output directory (falls back to SAE_OUT_DIR)
    #[arg(long, env = "SAE_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Suite size: `small` or `full`
    #[arg(long, default_value = "full")]
    config: String,
    #[arg(long, default_value_t = 271_828)]
    seed: u64,
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Fit(args) => run_fit(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Validate(args) => run_validate(args),
    }
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::empty()),
    }
}

fn scalar_draws(chain: &ChainOutput, f: impl Fn(&ParamState) -> f64) -> Vec<f64> {
    chain.states.iter().map(f).collect()
}

fn area_targets(data: &Dataset) -> Vec<AreaPopulationSummary> {
    (0..data.n_areas())
        .map(|i| {
            let units = data.area_units(i);
            let nf = units.len() as f64;
            let t_bar = (0..data.p())
                .map(|c| units.iter().map(|&j| data.t()[(j, c)]).sum::<f64>() / nf)
                .collect();
            let s_bar = (0..data.q())
                .map(|c| units.iter().map(|&j| data.s()[(j, c)]).sum::<f64>() / nf)
                .collect();
            AreaPopulationSummary::latent(t_bar, s_bar)
        })
        .collect()
}

fn summarize_rows(
    theta: &sae_core::nalgebra::DMatrix<f64>,
    level: f64,
) -> Result<Vec<PosteriorSummary>> {
    (0..theta.nrows())
        .map(|i| {
            let draws: Vec<f64> = theta.row(i).iter().cloned().collect();
            summarize(&draws, level).map_err(|e| anyhow::anyhow!("{e}"))
        })
        .collect()
}

fn run_fit(args: FitArgs) -> Result<()> {
    let file = load_file_config(&args.config_file)?;

    let data_path: PathBuf = file
        .merge_opt("data", args.data)?
        .context("missing --data (or `data` in the config file)")?;
    let roles_spec: String = file
        .merge_opt("roles", args.roles)?
        .context("missing --roles (or `roles` in the config file)")?;
    let mode_name: String = file.merge("mode", args.mode, "proposed".to_string())?;
    let iters = file.merge("iters", args.iters, 10_000)?;
    let burn = file.merge("burn", args.burn, iters / 2)?;
    let thin = file.merge("thin", args.thin, 10)?;
    let seed = file.merge("seed", args.seed, 1234)?;
    let level = file.merge("level", args.level, 0.95)?;
    let sigma2_w = file.merge("sigma2-w", args.sigma2_w, 1.0)?;
    let prior_var = file.merge("prior-var", args.prior_var, 1e6)?;
    let a_e = file.merge("a-e", args.a_e, 0.001)?;
    let b_e = file.merge("b-e", args.b_e, 0.001)?;
    let a_u = file.merge("a-u", args.a_u, 0.001)?;
    let b_u = file.merge("b-u", args.b_u, 0.001)?;
    let a_s = file.merge("a-s", args.a_s, 0.001)?;
    let b_s = file.merge("b-s", args.b_s, 0.001)?;
    let alpha_diag = file.merge("alpha-diag", args.alpha_diag, 0.5)?;
    let alpha_neighbor = file.merge("alpha-neighbor", args.alpha_neighbor, 0.2)?;
    let out: PathBuf = file
        .merge_opt("out", args.out)?
        .context("missing --out (or SAE_OUT_DIR, or `out` in the config file)")?;
    file.finish()?;

    let mode: ModelMode = mode_name
        .parse()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    if mode == ModelMode::TrueX {
        bail!("mode `true-x` is only available inside the simulation study");
    }

    output::preflight(&out)?;

    let roles = ColumnRoles::parse(&roles_spec)?;
    let (data, coding) = ingest::load_csv(&data_path, &roles)?;
    let (k, p, q) = (data.k(), data.p(), data.q());

    let mut hyper = HyperParams::flat(k, p, q);
    hyper.sigma2_beta = vec![prior_var; k];
    hyper.sigma2_delta = vec![prior_var; p];
    hyper.sigma2_gamma = vec![prior_var; q];
    hyper.a_e = a_e;
    hyper.b_e = b_e;
    hyper.a_u = a_u;
    hyper.b_u = b_u;
    hyper.a_s = a_s;
    hyper.b_s = b_s;
    hyper.sigma2_w = sigma2_w;
    hyper.alpha = patterned_alpha(k, alpha_diag, alpha_neighbor).map_err(|e| anyhow::anyhow!("{e}"))?;

    let chain_config = ChainConfig {
        n_iterations: iters,
        burn_in: burn,
        thinning: thin,
        seed,
        mode,
    };
    let chain = run_chain(&data, &hyper, &chain_config).map_err(|e| anyhow::anyhow!("{e}"))?;

    // Parameter summaries.
    let mut rows: Vec<(String, PosteriorSummary)> = Vec::new();
    let mut push = |name: String, draws: Vec<f64>| -> Result<()> {
        rows.push((name, summarize(&draws, level).map_err(|e| anyhow::anyhow!("{e}"))?));
        Ok(())
    };
    for c in 0..k {
        push(
            format!("beta{}", c + 1),
            scalar_draws(&chain, |s| s.beta[c]),
        )?;
    }
    for (c, name) in roles.t.iter().enumerate() {
        push(
            format!("delta_{name}"),
            scalar_draws(&chain, |s| s.delta[c]),
        )?;
    }
    for (c, name) in roles.s.iter().enumerate() {
        push(
            format!("gamma_{name}"),
            scalar_draws(&chain, |s| s.gamma[c]),
        )?;
    }
    push("sigma2_e".into(), scalar_draws(&chain, |s| s.sigma2_e))?;
    push("sigma2_u".into(), scalar_draws(&chain, |s| s.sigma2_u))?;
    if q > 0 && mode.continuous_latent() {
        push("sigma2_s".into(), scalar_draws(&chain, |s| s.sigma2_s))?;
    }
    for i in 0..data.n_areas() {
        push(
            format!("u_{}", data.area_label(i)),
            scalar_draws(&chain, |s| s.u[i]),
        )?;
    }

    // Area means, with and without the area random effect.
    let targets = area_targets(&data);
    let theta_plain =
        predict_area_means(&chain, &data, &targets, false).map_err(|e| anyhow::anyhow!("{e}"))?;
    let theta_with_u =
        predict_area_means(&chain, &data, &targets, true).map_err(|e| anyhow::anyhow!("{e}"))?;
    let area_plain = summarize_rows(&theta_plain, level)?;
    let area_with_u = summarize_rows(&theta_with_u, level)?;

    output::write_file(&out.join("params.csv"), &output::params_csv(&rows))?;
    output::write_file(
        &out.join("area_means.csv"),
        &output::area_means_csv(&data, &area_plain, &area_with_u),
    )?;
    output::write_file(&out.join("p_matrix.csv"), &output::p_matrix_csv(&chain, k))?;
    output::write_file(&out.join("category_coding.csv"), &output::coding_csv(&coding))?;
    output::write_file(&out.join("loglik_trace.csv"), &output::loglik_csv(&chain))?;
    if mode.categorical_latent() {
        let rec = recover_categories(&chain).map_err(|e| anyhow::anyhow!("{e}"))?;
        output::write_file(
            &out.join("recovery.csv"),
            &output::recovery_csv(&data, &coding, &rec),
        )?;
    }

    let pairs = vec![
        ("data".to_string(), data_path.display().to_string()),
        ("roles".to_string(), roles_spec),
        ("mode".to_string(), mode.to_string()),
        ("iters".to_string(), iters.to_string()),
        ("burn".to_string(), burn.to_string()),
        ("thin".to_string(), thin.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("level".to_string(), level.to_string()),
        ("sigma2-w".to_string(), sigma2_w.to_string()),
        ("prior-var".to_string(), prior_var.to_string()),
        ("a-e".to_string(), a_e.to_string()),
        ("b-e".to_string(), b_e.to_string()),
        ("a-u".to_string(), a_u.to_string()),
        ("b-u".to_string(), b_u.to_string()),
        ("a-s".to_string(), a_s.to_string()),
        ("b-s".to_string(), b_s.to_string()),
        ("alpha-diag".to_string(), alpha_diag.to_string()),
        ("alpha-neighbor".to_string(), alpha_neighbor.to_string()),
    ];
    config::write_manifest(
        &out.join("manifest.txt"),
        "fit",
        &pairs,
        &["area frequencies and covariate means are sample-based (latent draws)".to_string()],
    )?;

    println!(
        "fit complete: {} retained draws, outputs in {}",
        chain.len(),
        out.display()
    );
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let file = load_file_config(&args.config_file)?;

    let desk = file.merge("desk", if args.desk { Some(true) } else { None }, false)?;
    let seed = file.merge("seed", args.seed, 20_260_810)?;
    let base = if desk {
        ScenarioConfig::desk_scale(seed)
    } else {
        ScenarioConfig::paper_default(seed)
    };

    let iters = file.merge("iters", args.iters, base.n_iterations)?;
    let sc = ScenarioConfig {
        m: file.merge("areas", args.areas, base.m)?,
        n_range: (
            file.merge("n-min", args.n_min, base.n_range.0)?,
            file.merge("n-max", args.n_max, base.n_range.1)?,
        ),
        k: file.merge("categories", args.categories, base.k)?,
        beta: file
            .merge("beta", args.beta, FloatList(base.beta.clone()))?
            .0,
        sigma2_e: file.merge("sigma2-e", args.sigma2_e, base.sigma2_e)?,
        sigma2_u: file.merge("sigma2-u", args.sigma2_u, base.sigma2_u)?,
        p_levels: file
            .merge("p-levels", args.p_levels, FloatList(base.p_levels.clone()))?
            .0,
        replicates: file.merge("replicates", args.replicates, base.replicates)?,
        n_iterations: iters,
        burn_in: file.merge("burn", args.burn, iters / 2)?,
        thinning: file.merge("thin", args.thin, base.thinning)?,
        credible_level: file.merge("level", args.level, base.credible_level)?,
        seed,
    };
    // K defaults its beta vector; a custom K needs a matching beta list.
    if sc.beta.len() != sc.k && sc.beta == base.beta {
        bail!(
            "K={} needs an explicit --beta list of length {}",
            sc.k,
            sc.k
        );
    }
    let out: PathBuf = file
        .merge_opt("out", args.out)?
        .context("missing --out (or SAE_OUT_DIR, or `out` in the config file)")?;
    file.finish()?;

    output::preflight(&out)?;

    let manifest_pairs = simulate_manifest_pairs(desk, &sc);
    if args.dry_run {
        config::write_manifest(&out.join("manifest.txt"), "simulate", &manifest_pairs, &[])?;
        println!("dry run: wrote {}", out.join("manifest.txt").display());
        return Ok(());
    }

    let report = run_scenario(&sc).map_err(|e| anyhow::anyhow!("{e}"))?;

    output::write_file(&out.join("table1.csv"), &output::table1_csv(&report))?;
    output::write_file(&out.join("table2.csv"), &output::table2_csv(&report))?;
    output::write_file(
        &out.join("recovery.csv"),
        &output::recovery_rates_csv(&report),
    )?;
    if !report.failed_replicates.is_empty() {
        output::write_file(
            &out.join("failed_replicates.txt"),
            &(report.failed_replicates.join("\n") + "\n"),
        )?;
    }

    let notes = vec![
        "true area means scored from true sample category frequencies and true beta".to_string(),
        "area RMSE is the mean squared prediction error relative to the mean squared true area mean".to_string(),
        format!(
            "{} of {} replicates failed",
            report.failed_replicates.len(),
            sc.replicates
        ),
    ];
    config::write_manifest(&out.join("manifest.txt"), "simulate", &manifest_pairs, &notes)?;

    println!(
        "simulation complete: {} parameter rows, outputs in {}",
        report.parameter_table.len(),
        out.display()
    );
    Ok(())
}

fn simulate_manifest_pairs(desk: bool, sc: &ScenarioConfig) -> Vec<(String, String)> {
    vec![
        ("desk".to_string(), desk.to_string()),
        ("seed".to_string(), sc.seed.to_string()),
        ("areas".to_string(), sc.m.to_string()),
        ("categories".to_string(), sc.k.to_string()),
        ("n-min".to_string(), sc.n_range.0.to_string()),
        ("n-max".to_string(), sc.n_range.1.to_string()),
        ("beta".to_string(), FloatList(sc.beta.clone()).to_string()),
        ("sigma2-e".to_string(), sc.sigma2_e.to_string()),
        ("sigma2-u".to_string(), sc.sigma2_u.to_string()),
        (
            "p-levels".to_string(),
            FloatList(sc.p_levels.clone()).to_string(),
        ),
        ("replicates".to_string(), sc.replicates.to_string()),
        ("iters".to_string(), sc.n_iterations.to_string()),
        ("burn".to_string(), sc.burn_in.to_string()),
        ("thin".to_string(), sc.thinning.to_string()),
        ("level".to_string(), sc.credible_level.to_string()),
    ]
}

fn run_validate(args: ValidateArgs) -> Result<()> {
    let (conj_reps, geweke_samples) = match args.config.as_str() {
        "full" => (100_000, 10_000),
        "small" => (20_000, 2_000),
        other => bail!("unknown validate config `{other}` (expected `small` or `full`)"),
    };

    println!("conjugacy oracle suite ({conj_reps} draws per update)");
    let conj = conjugacy_suite(conj_reps, args.seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    print!("{conj}");

    println!("joint-distribution suite ({geweke_samples} samples per simulator)");
    let geweke = geweke_suite(geweke_samples, args.seed ^ 0x9E37_79B9).map_err(|e| anyhow::anyhow!("{e}"))?;
    print!("{geweke}");

    let failures = conj.failures().len() + geweke.failures().len();
    if failures > 0 {
        bail!("validation failed: {failures} check(s) outside tolerance");
    }
    println!("all checks passed");
    Ok(())
}
