//! Simulation laboratory: generate unit-level populations from the
//! categorical mixed model, perturb the true categories through a diagonal
//! misclassification matrix, fit the three competing estimators (true
//! categories, proposed latent-variable model, naive) over a grid of
//! perturbation levels, and aggregate bias, relative MSE and credible
//! interval coverage across replicates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{run_chain, ChainConfig};
use crate::model::{validate_dataset, Dataset, HyperParams, ModelMode, RawData};
use crate::predict::{predict_area_means, recover_categories, summarize, AreaPopulationSummary};
use crate::rng::RngStream;

/// Full description of one simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub m: usize,
    /// Inclusive range the per-area sample sizes are drawn from, once per
    /// replicate.
    pub n_range: (usize, usize),
    pub k: usize,
    pub beta: Vec<f64>,
    pub sigma2_e: f64,
    pub sigma2_u: f64,
    pub p_levels: Vec<f64>,
    pub replicates: usize,
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub credible_level: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// The reference study: m=20 areas, n_i in 3..=50, K=3,
    /// beta=(50, 5, -10), sigma2_e=100, sigma2_u=16, perturbation levels
    /// 0.5..0.8, 50 replicates, 10^4 sweeps with half burn-in and thinning 10.
    pub fn paper_default(seed: u64) -> Self {
        ScenarioConfig {
            m: 20,
            n_range: (3, 50),
            k: 3,
            beta: vec![50.0, 5.0, -10.0],
            sigma2_e: 100.0,
            sigma2_u: 16.0,
            p_levels: vec![0.5, 0.6, 0.7, 0.8],
            replicates: 50,
            n_iterations: 10_000,
            burn_in: 5_000,
            thinning: 10,
            credible_level: 0.95,
            seed,
        }
    }

    /// Scaled-down configuration for desk checks and CI: 10 replicates,
    /// 2000 sweeps, burn 1000, thinning 5.
    pub fn desk_scale(seed: u64) -> Self {
        ScenarioConfig {
            replicates: 10,
            n_iterations: 2_000,
            burn_in: 1_000,
            thinning: 5,
            ..ScenarioConfig::paper_default(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be positive".into()));
        }
        if self.n_range.0 == 0 || self.n_range.0 > self.n_range.1 {
            return Err(Error::Config(format!(
                "invalid per-area size range {:?}",
                self.n_range
            )));
        }
        if self.k < 2 {
            return Err(Error::Config("K must be at least 2".into()));
        }
        if self.beta.len() != self.k {
            return Err(Error::Config(format!(
                "beta has {} entries for K={}",
                self.beta.len(),
                self.k
            )));
        }
        if self.sigma2_e < 0.0 || self.sigma2_u < 0.0 {
            return Err(Error::Config("variances must be nonnegative".into()));
        }
        if self.p_levels.is_empty() || self.p_levels.iter().any(|p| *p <= 0.0 || *p > 1.0) {
            return Err(Error::Config(format!(
                "perturbation levels must lie in (0, 1], got {:?}",
                self.p_levels
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if !(0.0 < self.credible_level && self.credible_level < 1.0) {
            return Err(Error::Config(format!(
                "credible level {} outside (0, 1)",
                self.credible_level
            )));
        }
        self.chain_config(ModelMode::Proposed, 0).validate()
    }

    fn chain_config(&self, mode: ModelMode, seed: u64) -> ChainConfig {
        ChainConfig {
            n_iterations: self.n_iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed,
            mode,
        }
    }

    /// Parameter labels and true values scored in the tables.
    pub fn parameter_truths(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .beta
            .iter()
            .enumerate()
            .map(|(k, b)| (format!("beta{}", k + 1), *b))
            .collect();
        out.push(("sigma2_e".to_string(), self.sigma2_e));
        out.push(("sigma2_u".to_string(), self.sigma2_u));
        out
    }
}

/// One generated population: the latent truth behind a replicate.
#[derive(Debug, Clone)]
pub struct Population {
    pub y: Vec<f64>,
    pub area: Vec<usize>,
    pub area_sizes: Vec<usize>,
    pub x_true: Vec<usize>,
    pub u_true: Vec<f64>,
    /// Per-area mean of the fixed part, sum_k F_ik beta_k with F the true
    /// sample category frequencies.
    pub theta_true: Vec<f64>,
}

/// Draw one population: n_i uniform on the configured range, x uniform on
/// 1..=K, u_i ~ N(0, sigma2_u), y = beta_x + u + e with e ~ N(0, sigma2_e).
/// Zero variances are allowed and produce noiseless draws.
pub fn generate_population(config: &ScenarioConfig, stream: &mut RngStream) -> Result<Population> {
    config.validate()?;
    let sd_u = config.sigma2_u.sqrt();
    let sd_e = config.sigma2_e.sqrt();
    let mut y = Vec::new();
    let mut area = Vec::new();
    let mut x_true = Vec::new();
    let mut u_true = Vec::with_capacity(config.m);
    let mut theta_true = Vec::with_capacity(config.m);
    let mut area_sizes = Vec::with_capacity(config.m);

    for i in 0..config.m {
        let n_i = stream.draw_uniform_int(config.n_range.0, config.n_range.1);
        area_sizes.push(n_i);
        let u_i = if sd_u > 0.0 {
            stream.draw_normal(0.0, sd_u)?
        } else {
            0.0
        };
        u_true.push(u_i);
        let mut freq = vec![0.0; config.k];
        for _ in 0..n_i {
            let x = stream.draw_uniform_int(1, config.k);
            freq[x - 1] += 1.0;
            let e = if sd_e > 0.0 {
                stream.draw_normal(0.0, sd_e)?
            } else {
                0.0
            };
            y.push(config.beta[x - 1] + u_i + e);
            x_true.push(x);
            area.push(i);
        }
        let theta = freq
            .iter()
            .zip(&config.beta)
            .map(|(f, b)| f / n_i as f64 * b)
            .sum();
        theta_true.push(theta);
    }

    Ok(Population {
        y,
        area,
        area_sizes,
        x_true,
        u_true,
        theta_true,
    })
}

/// Perturb true categories through the diagonal-p transition matrix: keep
/// with probability p, otherwise move uniformly to one of the other K-1
/// categories.
pub fn perturb_categories(
    x: &[usize],
    p: f64,
    k: usize,
    stream: &mut RngStream,
) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "perturbation probability {p} outside (0, 1]"
        )));
    }
    if k < 2 && p < 1.0 {
        return Err(Error::Config(
            "cannot perturb with K=1: no other category exists".into(),
        ));
    }
    let mut z = Vec::with_capacity(x.len());
    for &cat in x {
        if cat < 1 || cat > k {
            return Err(Error::CategoryDomain(format!(
                "category {cat} outside 1..={k}"
            )));
        }
        if p >= 1.0 || stream.draw_uniform() < p {
            z.push(cat);
        } else {
            let other = stream.draw_uniform_int(1, k - 1);
            z.push(if other < cat { other } else { other + 1 });
        }
    }
    Ok(z)
}

/// Assemble the fitting dataset for one replicate: observed categories z,
/// the generated response, and the truth attached for the true-x estimator.
pub fn dataset_from_population(pop: &Population, z: Vec<usize>, k: usize) -> Result<Dataset> {
    let m = pop.area_sizes.len();
    validate_dataset(RawData {
        y: pop.y.clone(),
        t: vec![],
        s: vec![],
        z,
        area: pop.area.clone(),
        area_labels: (1..=m).map(|i| i.to_string()).collect(),
        k,
    })?
    .with_true_categories(pop.x_true.clone())
}

/// Which estimator a table row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelLabel {
    True,
    Prop,
    Naive,
}

impl ModelLabel {
    pub const ALL: [ModelLabel; 3] = [ModelLabel::True, ModelLabel::Prop, ModelLabel::Naive];

    pub fn mode(self) -> ModelMode {
        match self {
            ModelLabel::True => ModelMode::TrueX,
            ModelLabel::Prop => ModelMode::Proposed,
            ModelLabel::Naive => ModelMode::Naive,
        }
    }
}

impl std::fmt::Display for ModelLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelLabel::True => write!(f, "True"),
            ModelLabel::Prop => write!(f, "Prop"),
            ModelLabel::Naive => write!(f, "Naive"),
        }
    }
}

/// Signed mean estimation error relative to the truth.
pub fn relative_bias(estimates: &[f64], truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::UndefinedMetric(
            "relative bias against zero truth; report absolute bias instead".into(),
        ));
    }
    if estimates.is_empty() {
        return Err(Error::UndefinedMetric("relative bias of no estimates".into()));
    }
    let mean_err =
        estimates.iter().map(|e| e - truth).sum::<f64>() / estimates.len() as f64;
    Ok(mean_err / truth)
}

/// Mean squared estimation error relative to the squared truth.
pub fn relative_mse(estimates: &[f64], truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::UndefinedMetric(
            "relative MSE against zero truth; report absolute MSE instead".into(),
        ));
    }
    if estimates.is_empty() {
        return Err(Error::UndefinedMetric("relative MSE of no estimates".into()));
    }
    let mean_sq =
        estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64;
    Ok(mean_sq / (truth * truth))
}

/// Fraction of closed intervals containing the truth; NaN for an empty list.
pub fn interval_coverage(intervals: &[(f64, f64)], truth: f64) -> f64 {
    if intervals.is_empty() {
        return f64::NAN;
    }
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
        .count();
    hits as f64 / intervals.len() as f64
}

/// One row of the parameter comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub p: f64,
    pub parameter: String,
    pub model: ModelLabel,
    pub est: f64,
    pub rb: f64,
    pub rmse: f64,
    pub coverage: f64,
}

/// One row of the per-area small-area-mean table.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaMetricsRow {
    pub area: usize,
    pub p: f64,
    pub model: ModelLabel,
    pub rmse_x100: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRow {
    pub p: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub parameter_table: Vec<MetricsRow>,
    pub area_table: Vec<AreaMetricsRow>,
    pub recovery: Vec<RecoveryRow>,
    /// Messages for replicates excluded because of numerical failures.
    pub failed_replicates: Vec<String>,
    pub config: ScenarioConfig,
}

struct ModelOutcome {
    estimates: Vec<f64>,
    intervals: Vec<(f64, f64)>,
    theta_mean: Vec<f64>,
    theta_interval: Vec<(f64, f64)>,
}

struct LevelOutcome {
    theta_true: Vec<f64>,
    models: Vec<ModelOutcome>,
    recovery: f64,
}

struct ReplicateOutcome {
    levels: Vec<LevelOutcome>,
}

fn fit_one_model(
    config: &ScenarioConfig,
    data: &Dataset,
    hyper: &HyperParams,
    label: ModelLabel,
    seed: u64,
) -> Result<(ModelOutcome, Option<f64>)> {
    let chain = run_chain(data, hyper, &config.chain_config(label.mode(), seed))?;

    let n_params = config.k + 2;
    let mut estimates = Vec::with_capacity(n_params);
    let mut intervals = Vec::with_capacity(n_params);
    let mut scalar_draws = vec![0.0; chain.len()];
    for param in 0..n_params {
        for (g, state) in chain.states.iter().enumerate() {
            scalar_draws[g] = if param < config.k {
                state.beta[param]
            } else if param == config.k {
                state.sigma2_e
            } else {
                state.sigma2_u
            };
        }
        let summary = summarize(&scalar_draws, config.credible_level)?;
        estimates.push(summary.mean);
        intervals.push((summary.lower, summary.upper));
    }

    let targets = vec![AreaPopulationSummary::latent_only(); data.n_areas()];
    let theta = predict_area_means(&chain, data, &targets, false)?;
    let mut theta_mean = Vec::with_capacity(data.n_areas());
    let mut theta_interval = Vec::with_capacity(data.n_areas());
    for i in 0..data.n_areas() {
        let draws: Vec<f64> = theta.row(i).iter().cloned().collect();
        let summary = summarize(&draws, config.credible_level)?;
        theta_mean.push(summary.mean);
        theta_interval.push((summary.lower, summary.upper));
    }

    let recovery = if label == ModelLabel::Prop {
        let rec = recover_categories(&chain)?;
        Some(rec.agreement_with(data.true_x().expect("simulated data carries truth"))?)
    } else {
        None
    };

    Ok((
        ModelOutcome {
            estimates,
            intervals,
            theta_mean,
            theta_interval,
        },
        recovery,
    ))
}

fn run_replicate(config: &ScenarioConfig, mut stream: RngStream) -> Result<ReplicateOutcome> {
    let pop = generate_population(config, &mut stream)?;
    let hyper = HyperParams::flat(config.k, 0, 0);
    let mut levels = Vec::with_capacity(config.p_levels.len());
    for &p in &config.p_levels {
        let z = perturb_categories(&pop.x_true, p, config.k, &mut stream)?;
        let data = dataset_from_population(&pop, z, config.k)?;
        let mut models = Vec::with_capacity(ModelLabel::ALL.len());
        let mut recovery = f64::NAN;
        for label in ModelLabel::ALL {
            let seed = stream.split().seed();
            let (outcome, rec) = fit_one_model(config, &data, &hyper, label, seed)?;
            if let Some(r) = rec {
                recovery = r;
            }
            models.push(outcome);
        }
        levels.push(LevelOutcome {
            theta_true: pop.theta_true.clone(),
            models,
            recovery,
        });
    }
    Ok(ReplicateOutcome { levels })
}

/// Run the full scenario: replicates (in parallel, each owning a stream split
/// from the scenario seed) by perturbation levels by the three estimators,
/// then aggregate. Replicates that fail numerically are excluded with a
/// warning; the scenario aborts if more than 5% fail.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport> {
    config.validate()?;
    let mut root = RngStream::new(config.seed);
    let jobs: Vec<(usize, RngStream)> = (0..config.replicates)
        .map(|r| (r, root.split()))
        .collect();

    let outcomes: Vec<(usize, Result<ReplicateOutcome>)> = jobs
        .into_par_iter()
        .map(|(r, stream)| (r, run_replicate(config, stream)))
        .collect();

    let mut failed_replicates = Vec::new();
    let mut kept = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(o) => kept.push(o),
            Err(e) => {
                let msg = format!("replicate {r}: {e}");
                log::warn!("excluding failed {msg}");
                failed_replicates.push(msg);
            }
        }
    }
    let failure_cap = (0.05 * config.replicates as f64).floor() as usize;
    if failed_replicates.len() > failure_cap {
        return Err(Error::Config(format!(
            "{} of {} replicates failed (cap {}):\n{}",
            failed_replicates.len(),
            config.replicates,
            failure_cap,
            failed_replicates.join("\n")
        )));
    }
    if kept.is_empty() {
        return Err(Error::Config("no successful replicates".into()));
    }

    let truths = config.parameter_truths();
    let mut parameter_table = Vec::new();
    let mut area_table = Vec::new();
    let mut recovery = Vec::new();

    for (pi, &p) in config.p_levels.iter().enumerate() {
        for (mi, model) in ModelLabel::ALL.iter().enumerate() {
            for (ti, (name, truth)) in truths.iter().enumerate() {
                let estimates: Vec<f64> = kept
                    .iter()
                    .map(|rep| rep.levels[pi].models[mi].estimates[ti])
                    .collect();
                let intervals: Vec<(f64, f64)> = kept
                    .iter()
                    .map(|rep| rep.levels[pi].models[mi].intervals[ti])
                    .collect();
                let est = estimates.iter().sum::<f64>() / estimates.len() as f64;
                parameter_table.push(MetricsRow {
                    p,
                    parameter: name.clone(),
                    model: *model,
                    est,
                    rb: relative_bias(&estimates, *truth)?,
                    rmse: relative_mse(&estimates, *truth)?,
                    coverage: interval_coverage(&intervals, *truth),
                });
            }

            for area in 0..config.m {
                // Relative MSE as mean squared error over the mean squared
                // truth: per-replicate ratios would blow up on the small
                // areas whose true mean lands exactly at zero.
                let mut sq_err = 0.0;
                let mut sq_truth = 0.0;
                let mut hits = 0usize;
                for rep in &kept {
                    let level = &rep.levels[pi];
                    let truth = level.theta_true[area];
                    let outcome = &level.models[mi];
                    let d = outcome.theta_mean[area] - truth;
                    sq_err += d * d;
                    sq_truth += truth * truth;
                    let (lo, hi) = outcome.theta_interval[area];
                    if lo <= truth && truth <= hi {
                        hits += 1;
                    }
                }
                if sq_truth == 0.0 {
                    return Err(Error::UndefinedMetric(format!(
                        "true mean of area {} is zero in every replicate",
                        area + 1
                    )));
                }
                area_table.push(AreaMetricsRow {
                    area: area + 1,
                    p,
                    model: *model,
                    rmse_x100: 100.0 * sq_err / sq_truth,
                    coverage: hits as f64 / kept.len() as f64,
                });
            }
        }

        let rate =
            kept.iter().map(|rep| rep.levels[pi].recovery).sum::<f64>() / kept.len() as f64;
        recovery.push(RecoveryRow { p, rate });
    }

    Ok(ScenarioReport {
        parameter_table,
        area_table,
        recovery,
        failed_replicates,
        config: config.clone(),
    })
}
