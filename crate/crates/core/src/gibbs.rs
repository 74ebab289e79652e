//! The Gibbs engine: state initialization, the full-conditional updates and
//! the chain driver.
//!
//! One sweep cycles x → beta → delta → gamma → w → sigma2_e → sigma2_u →
//! sigma2_s → u → P, with the latent updates gated by the model mode (Naive
//! pins x = z and w = s; TrueX pins x to the supplied truth). The order is
//! fixed to keep runs reproducible. All regression-block conditionals are
//! Gaussians specified by a precision matrix and linear term and drawn
//! through the Cholesky kernel; the variance components are conjugate Gamma
//! updates on the precision scale.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    log_complete_likelihood, Dataset, HyperParams, ModelMode, ParamState, TransitionMatrix,
};
use crate::rng::RngStream;

/// Sweep schedule and retention policy for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub mode: ModelMode,
}

impl ChainConfig {
    /// 10^4 sweeps, first half discarded, one of every 10 kept.
    pub fn paper_default(mode: ModelMode, seed: u64) -> Self {
        ChainConfig {
            n_iterations: 10_000,
            burn_in: 5_000,
            thinning: 10,
            seed,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::Config("n_iterations must be positive".into()));
        }
        if self.burn_in >= self.n_iterations {
            return Err(Error::Config(format!(
                "burn_in {} must be below n_iterations {}",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thinning
    }
}

/// Retained draws of one chain plus the log-likelihood trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub states: Vec<ParamState>,
    pub log_likelihood: Vec<f64>,
    pub mode: ModelMode,
    pub seed: u64,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Deterministic starting point: x from the observed categories (or the
/// supplied truth), w from the observed s, regression coefficients from OLS
/// on the observed design with a zero fallback when it is singular or the
/// response is degenerate, variance components from the residuals, u = 0 and
/// P at its prior row means.
pub fn init_state(data: &Dataset, hyper: &HyperParams, mode: ModelMode) -> Result<ParamState> {
    hyper.validate(data.k(), data.p(), data.q())?;
    let x = match mode {
        ModelMode::TrueX => data
            .true_x()
            .ok_or_else(|| {
                Error::Config("true-x mode requires a dataset carrying true categories".into())
            })?
            .to_vec(),
        _ => data.z().to_vec(),
    };
    let w = data.s().clone();

    let n = data.n_units();
    let (k, p, q) = (data.k(), data.p(), data.q());
    let design = {
        let mut d = DMatrix::zeros(n, k + p + q);
        for (j, &cat) in x.iter().enumerate() {
            d[(j, cat - 1)] = 1.0;
        }
        for r in 0..n {
            for c in 0..p {
                d[(r, k + c)] = data.t()[(r, c)];
            }
            for c in 0..q {
                d[(r, k + p + c)] = data.s()[(r, c)];
            }
        }
        d
    };

    let y_mean = data.y().sum() / n as f64;
    let y_var = data.y().iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
    let mut coefs = DVector::zeros(k + p + q);
    if y_var < 1e-12 {
        log::warn!("response has (near) zero variance; initializing coefficients at zero");
    } else {
        let xtx = design.transpose() * &design;
        let xty = design.transpose() * data.y();
        match xtx.cholesky() {
            Some(chol) => {
                let sol = chol.solve(&xty);
                if sol.iter().all(|v| v.is_finite()) {
                    coefs = sol;
                } else {
                    log::warn!("OLS initialization produced non-finite coefficients; using zeros");
                }
            }
            None => {
                log::warn!("observed design is singular; initializing coefficients at zero");
            }
        }
    }

    let fitted = &design * &coefs;
    let ssr = (data.y() - &fitted).norm_squared();
    let sigma2_e = (ssr / n as f64).max(1e-4);

    let beta = DVector::from_fn(k, |i, _| coefs[i]);
    let delta = DVector::from_fn(p, |i, _| coefs[k + i]);
    let gamma = DVector::from_fn(q, |i, _| coefs[k + p + i]);

    let p_matrix = TransitionMatrix::new(hyper.alpha_row_means())?;

    Ok(ParamState {
        beta,
        delta,
        gamma,
        sigma2_e,
        sigma2_u: 1.0,
        sigma2_s: 1.0,
        u: vec![0.0; data.n_areas()],
        p_matrix,
        x,
        w,
    })
}

/// Which mean component to leave out of the working residual.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Skip {
    None,
    Beta,
    Gamma,
    U,
    Delta,
}

fn partial_residual(state: &ParamState, data: &Dataset, skip: Skip) -> DVector<f64> {
    let mut r = data.y().clone();
    let (p, q) = (data.p(), data.q());
    for j in 0..data.n_units() {
        if skip != Skip::Beta {
            r[j] -= state.beta[state.x[j] - 1];
        }
        if skip != Skip::Delta {
            for c in 0..p {
                r[j] -= data.t()[(j, c)] * state.delta[c];
            }
        }
        if skip != Skip::Gamma {
            for c in 0..q {
                r[j] -= state.w[(j, c)] * state.gamma[c];
            }
        }
        if skip != Skip::U {
            r[j] -= state.u[data.area()[j]];
        }
    }
    r
}

/// Normalized sampling probabilities for one unit's latent category:
/// weight_k ∝ p_{k, z_j} · N(y_j | beta_k + t'delta + w'gamma + u_i, sigma2_e),
/// computed in log space with max-subtraction.
pub(crate) fn x_weights(state: &ParamState, data: &Dataset, unit: usize) -> Result<Vec<f64>> {
    let k = data.k();
    let mut base = data.y()[unit] - state.u[data.area()[unit]];
    for c in 0..data.p() {
        base -= data.t()[(unit, c)] * state.delta[c];
    }
    for c in 0..data.q() {
        base -= state.w[(unit, c)] * state.gamma[c];
    }
    let z = data.z()[unit];
    let mut logw = Vec::with_capacity(k);
    for cat in 1..=k {
        let resid = base - state.beta[cat - 1];
        let lp = state.p_matrix.prob(cat, z).ln();
        logw.push(lp - resid * resid / (2.0 * state.sigma2_e));
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights(format!(
            "latent category update at unit {unit}: all weights vanished"
        )));
    }
    let weights: Vec<f64> = logw.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Full conditional (data augmentation) for every unit's latent category.
pub fn update_x(state: &mut ParamState, data: &Dataset, stream: &mut RngStream) -> Result<()> {
    for j in 0..data.n_units() {
        let weights = x_weights(state, data, j)?;
        state.x[j] = stream
            .draw_categorical(&weights)
            .map_err(|_| Error::DegenerateWeights(format!("latent category update at unit {j}")))?;
    }
    Ok(())
}

pub(crate) fn beta_conditional(
    state: &ParamState,
    data: &Dataset,
    hyper: &HyperParams,
) -> (DMatrix<f64>, DVector<f64>) {
    let k = data.k();
    let r = partial_residual(state, data, Skip::Beta);
    let mut counts = vec![0.0; k];
    let mut sums = vec![0.0; k];
    for j in 0..data.n_units() {
        counts[state.x[j] - 1] += 1.0;
        sums[state.x[j] - 1] += r[j];
    }
    // X'X is diagonal under the ANOVA parameterization.
    let precision = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            counts[i] / state.sigma2_e + 1.0 / hyper.sigma2_beta[i]
        } else {
            0.0
        }
    });
    let linear = DVector::from_fn(k, |i, _| {
        sums[i] / state.sigma2_e + hyper.mu_beta[i] / hyper.sigma2_beta[i]
    });
    (precision, linear)
}

pub fn update_beta(
    state: &mut ParamState,
    data: &Dataset,
    hyper: &HyperParams,
    stream: &mut RngStream,
) -> Result<()> {
    let (precision, linear) = beta_conditional(state, data, hyper);
    state.beta = stream.draw_mv_normal_from_precision(&precision, &linear, "beta")?;
    Ok(())
}

pub(crate) fn delta_conditional(
    state: &ParamState,
    data: &Dataset,
    hyper: &HyperParams,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = data.p();
    let r = partial_residual(state, data, Skip::Delta);
    let mut precision = data.t().transpose() * data.t() / state.sigma2_e;
    for i in 0..p {
        precision[(i, i)] += 1.0 / hyper.sigma2_delta[i];
    }
    let mut linear = data.t().transpose() * r / state.sigma2_e;
    for i in 0..p {
        linear[i] += hyper.mu_delta[i] / hyper.sigma2_delta[i];
    }
    (precision, linear)
}

pub fn update_delta(
    state: &mut ParamState,
    data: &Dataset,
    hyper: &HyperParams,
    stream: &mut RngStream,
) -> Result<()> {
    if data.p() == 0 {
        return Ok(());
    }
    let (precision, linear) = delta_conditional(state, data, hyper);
    state.delta = stream.draw_mv_normal_from_precision(&precision, &linear, "delta")?;
    Ok(())
}

pub(crate) fn gamma_conditional(
    state: &ParamState,
    data: &Dataset,
    hyper: &HyperParams,
) -> (DMatrix<f64>, DVector<f64>) {
    let q = data.q();
    let r = partial_residual(state, data, Skip::Gamma);
    let mut precision = state.w.transpose() * &state.w / state.sigma2_e;
    for i in 0..q {
        precision[(i, i)] += 1.0 / hyper.sigma2_gamma[i];
    }
    let mut linear = state.w.transpose() * r / state.sigma2_e;
    for i in 0..q {
        linear[i] += hyper.mu_gamma[i] / hyper.sigma2_gamma[i];
    }
    (precision, linear)
}

pub fn update_gamma(
    state: &mut ParamState,
    data: &Dataset,
    hyper: &HyperParams,
    stream: &mut RngStream,
) -> Result<()> {
    if data.q() == 0 {
        return Ok(());
    }
    let (precision, linear) = gamma_conditional(state, data, hyper);
    state.gamma = stream.draw_mv_normal_from_precision(&precision, &linear, "gamma")?;
    Ok(())
}

/// Conditional for one unit's latent continuous covariates, derived from the
/// product of the three Gaussian factors N(y | theta, sigma2_e),
/// N(s | w, sigma2_s) and N(w | 0, sigma2_w):
/// Q = gamma gamma'/sigma2_e + I/sigma2_s + I/sigma2_w and
/// b = gamma r/sigma2_e + s/sigma2_s with r the residual without the w'gamma
/// term.
pub(crate) fn w_conditional(
    state: &ParamState,
    data: &Dataset,
    hyper: &HyperParams,
    unit: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let q = data.q();
    let mut r = data.y()[unit] - state.beta[state.x[unit] - 1] - state.u[data.area()[unit]];
    for c in 0..data.p() {
        r -= data.t()[(unit, c)] * state.delta[c];
    }
    let mut precision = DMatrix::from_fn(q, q, |i, j| {
        state.gamma[i] * state.gamma[j] / state.sigma2_e
    });
    for i in 0..q {
        precision[(i, i)] += 1.0 / state.sigma2_s + 1.0 / hyper.sigma2_w;
    }
    let linear = DVector::from_fn(q, |i, _| {
        state.gamma[i] * r / state.sigma2_e + data.s()[(unit, i)] / state.sigma2_s
    });
    (precision, linear)
}

pub fn update_w(
    state: &mut ParamState,
    data: &Dataset,
    hyper: &HyperParams,
    stream: &mut RngStream,
) -> Result<()> {
    if data.q() == 0 {
        return Ok(());
    }
    for j in 0..data.n_units() {
        let (precision, linear) = w_conditional(state, data, hyper, j);
        let draw = stream.draw_mv_normal_from_precision(
            &precision,
            &linear,
            &format!("w at unit {j}"),
        )?;
        for c in 0..data.q() {
            state.w[(j, c)] = draw[c];
        }
    }
    Ok(())
}

pub(crate) fn sigma2_e_conditional(
    state: &ParamState,
    data: &Dataset,
    hyper: &HyperParams,
) -> (f64, f64) {
    let r = partial_residual(state, data, Skip::None);
    let ssr = r.norm_squared();
    (
        hyper.a_e + data.n_units() as f64 / 2.0,
        hyper.b_e + ssr / 2.0,
    )
}

pub fn update_sigma2_e(
    state: &mut ParamState,
    data: &Dataset,
    hyper: &HyperParams,
    stream: &mut RngStream,
) -> Result<()> {
    let (shape, rate) = sigma2_e_conditional(state, data, hyper);
    state.sigma2_e = draw_variance(stream, shape, rate, "sigma2_e")?;
    Ok(())
}

pub(crate) fn sigma2_u_conditional(state: &ParamState, hyper: &HyperParams) -> (f64, f64) {
    let ss: f64 = state.u.iter().map(|ui| ui * ui).sum();
    (hyper.a_u + state.u.len() as f64 / 2.0, hyper.b_u + ss / 2.0)
}

pub fn update_sigma2_u(
    state: &mut ParamState,
    hyper: &HyperParams,
    stream: &mut RngStream,
) -> Result<()> {
    let (shape, rate) = sigma2_u_conditional(state, hyper);
    state.sigma2_u = draw_variance(stream, shape, rate, "sigma2_u")?;
    Ok(())
}

pub(crate) fn sigma2_s_conditional(
    state: &ParamState,
    data: &Dataset,
    hyper: &HyperParams,
) -> (f64, f64) {
    let ss = (data.s() - &state.w).norm_squared();
    (
        hyper.a_s + (data.n_units() * data.q()) as f64 / 2.0,
        hyper.b_s + ss / 2.0,
    )
}

pub fn update_sigma2_s(
    state: &mut ParamState,
    data: &Dataset,
    hyper: &HyperParams,
    stream: &mut RngStream,
) -> Result<()> {
    if data.q() == 0 {
        return Ok(());
    }
    let (shape, rate) = sigma2_s_conditional(state, data, hyper);
    state.sigma2_s = draw_variance(stream, shape, rate, "sigma2_s")?;
    Ok(())
}

/// Draw a precision from Gamma(shape, rate) and return its reciprocal.
fn draw_variance(stream: &mut RngStream, shape: f64, rate: f64, block: &str) -> Result<f64> {
    let precision = stream.draw_gamma(shape, rate)?;
    if precision <= 0.0 || !precision.is_finite() {
        return Err(Error::Numerical {
            block: block.to_string(),
            detail: format!("precision draw {precision} from Gamma({shape}, {rate})"),
        });
    }
    Ok(1.0 / precision)
}

/// Scalar conditional for one area effect: precision 1/sigma2_u + n_i/sigma2_e,
/// mean driven by the sum of residuals without the u term.
pub(crate) fn u_conditional(state: &ParamState, data: &Dataset, area: usize) -> (f64, f64) {
    let units = data.area_units(area);
    let mut sum = 0.0;
    for &j in units {
        let mut r = data.y()[j] - state.beta[state.x[j] - 1];
        for c in 0..data.p() {
            r -= data.t()[(j, c)] * state.delta[c];
        }
        for c in 0..data.q() {
            r -= state.w[(j, c)] * state.gamma[c];
        }
        sum += r;
    }
    let precision = 1.0 / state.sigma2_u + units.len() as f64 / state.sigma2_e;
    let mean = sum / state.sigma2_e / precision;
    (mean, 1.0 / precision)
}

pub fn update_u(state: &mut ParamState, data: &Dataset, stream: &mut RngStream) -> Result<()> {
    for i in 0..data.n_areas() {
        let (mean, var) = u_conditional(state, data, i);
        state.u[i] = stream.draw_normal(mean, var.sqrt())?;
    }
    Ok(())
}

/// Cross-tabulation nu[k'][k] = #(x = k', z = k).
pub(crate) fn misclassification_counts(state: &ParamState, data: &Dataset) -> Vec<Vec<f64>> {
    let k = data.k();
    let mut nu = vec![vec![0.0; k]; k];
    for j in 0..data.n_units() {
        nu[state.x[j] - 1][data.z()[j] - 1] += 1.0;
    }
    nu
}

/// Row-wise Dirichlet update of the misclassification matrix; rows with no
/// occupied true category revert to their prior.
pub fn update_p_matrix(
    state: &mut ParamState,
    data: &Dataset,
    hyper: &HyperParams,
    stream: &mut RngStream,
) -> Result<()> {
    let nu = misclassification_counts(state, data);
    for (row, counts) in nu.iter().enumerate() {
        let alpha: Vec<f64> = hyper.alpha[row]
            .iter()
            .zip(counts)
            .map(|(a, c)| a + c)
            .collect();
        let draw = stream.draw_dirichlet(&alpha)?;
        state.p_matrix.set_row(row + 1, draw)?;
    }
    Ok(())
}

/// One full update cycle in the fixed order, honoring the mode gates.
pub fn gibbs_sweep(
    state: &mut ParamState,
    data: &Dataset,
    hyper: &HyperParams,
    mode: ModelMode,
    stream: &mut RngStream,
) -> Result<()> {
    if mode.categorical_latent() {
        update_x(state, data, stream)?;
    }
    update_beta(state, data, hyper, stream)?;
    update_delta(state, data, hyper, stream)?;
    update_gamma(state, data, hyper, stream)?;
    if mode.continuous_latent() {
        update_w(state, data, hyper, stream)?;
    }
    update_sigma2_e(state, data, hyper, stream)?;
    update_sigma2_u(state, hyper, stream)?;
    if mode.continuous_latent() {
        update_sigma2_s(state, data, hyper, stream)?;
    }
    update_u(state, data, stream)?;
    if mode.categorical_latent() {
        update_p_matrix(state, data, hyper, stream)?;
    }
    Ok(())
}

/// Run one chain: initialize, sweep `n_iterations` times and retain every
/// `thinning`-th state after `burn_in`, together with its complete-data
/// log-likelihood. Retained states are invariant-checked as they are stored.
pub fn run_chain(data: &Dataset, hyper: &HyperParams, config: &ChainConfig) -> Result<ChainOutput> {
    config.validate()?;
    let mut stream = RngStream::new(config.seed);
    let mut state = init_state(data, hyper, config.mode)?;

    let mut output = ChainOutput {
        states: Vec::with_capacity(config.n_retained()),
        log_likelihood: Vec::with_capacity(config.n_retained()),
        mode: config.mode,
        seed: config.seed,
    };

    for iter in 0..config.n_iterations {
        gibbs_sweep(&mut state, data, hyper, config.mode, &mut stream)
            .map_err(|e| e.at_iteration(iter))?;
        let past_burn = iter >= config.burn_in;
        if past_burn && (iter - config.burn_in) % config.thinning == config.thinning - 1 {
            state.check_invariants(data).map_err(|e| e.at_iteration(iter))?;
            output
                .log_likelihood
                .push(log_complete_likelihood(&state, data, hyper)?);
            output.states.push(state.clone());
        }
    }
    debug_assert_eq!(output.states.len(), config.n_retained());
    Ok(output)
}
