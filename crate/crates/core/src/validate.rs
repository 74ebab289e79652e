//! Sampler-correctness suites, runnable from the CLI and from the acceptance
//! tests.
//!
//! The conjugacy suite reruns every full-conditional update many times on a
//! frozen state and compares the empirical draw moments against closed forms
//! computed here from the model definition (never through the sampler's own
//! code path). The joint-distribution suite compares a marginal-conditional
//! simulator (parameters from the prior) against a successive-conditional
//! simulator (alternating data draws and Gibbs sweeps): if the sweep leaves
//! the joint distribution invariant, both produce the same moments.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::gibbs::{
    gibbs_sweep, update_beta, update_delta, update_gamma, update_p_matrix, update_sigma2_e,
    update_sigma2_s, update_sigma2_u, update_u, update_w, update_x,
};
use crate::model::{
    validate_dataset, Dataset, HyperParams, ModelMode, ParamState, RawData, TransitionMatrix,
};
use crate::rng::RngStream;

/// One scalar check: passes when |observed - expected| <= tolerance.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        (self.observed - self.expected).abs() <= self.tolerance
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: observed {:.6}, expected {:.6}, tolerance {:.6}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.expected,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for check in &self.checks {
            writeln!(f, "{check}")?;
        }
        Ok(())
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standard error of the sample variance via the empirical fourth moment.
fn variance_se(xs: &[f64], mean: f64, var: f64) -> f64 {
    let n = xs.len() as f64;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    ((m4 - var * var).max(0.0) / n).sqrt()
}

fn moment_checks(name: &str, draws: &[f64], expect_mean: f64, expect_var: f64) -> Vec<CheckResult> {
    let n = draws.len() as f64;
    let (mean, var) = mean_var(draws);
    let mean_tol = 5.0 * (expect_var / n).sqrt();
    let var_tol = 5.0 * variance_se(draws, mean, var);
    vec![
        CheckResult {
            name: format!("{name} mean"),
            observed: mean,
            expected: expect_mean,
            tolerance: mean_tol,
        },
        CheckResult {
            name: format!("{name} variance"),
            observed: var,
            expected: expect_var,
            tolerance: var_tol,
        },
    ]
}

/// Frozen fixture: m=2 areas of 2 units, K=2, p=1, q=1.
struct Fixture {
    data: Dataset,
    state: ParamState,
    hyper: HyperParams,
}

fn fixture() -> Fixture {
    let data = validate_dataset(RawData {
        y: vec![1.0, 2.4, -0.5, 0.9],
        t: vec![vec![0.5], vec![-0.3], vec![1.1], vec![0.2]],
        s: vec![vec![0.8], vec![-0.6], vec![0.4], vec![1.5]],
        z: vec![1, 2, 2, 1],
        area: vec![0, 0, 1, 1],
        area_labels: vec!["a0".into(), "a1".into()],
        k: 2,
    })
    .expect("fixture data is valid");
    let state = ParamState {
        beta: DVector::from_row_slice(&[0.7, -0.2]),
        delta: DVector::from_row_slice(&[0.4]),
        gamma: DVector::from_row_slice(&[-0.8]),
        sigma2_e: 1.3,
        sigma2_u: 0.7,
        sigma2_s: 0.5,
        u: vec![0.3, -0.1],
        p_matrix: TransitionMatrix::new(vec![vec![0.85, 0.15], vec![0.25, 0.75]])
            .expect("fixture P is row-stochastic"),
        x: vec![1, 2, 1, 2],
        w: DMatrix::from_row_slice(4, 1, &[0.5, -0.2, 0.1, 0.9]),
    };
    let hyper = HyperParams {
        mu_beta: vec![0.2, -0.1],
        sigma2_beta: vec![2.0, 1.5],
        mu_delta: vec![0.1],
        sigma2_delta: vec![1.2],
        mu_gamma: vec![-0.3],
        sigma2_gamma: vec![0.8],
        a_u: 2.0,
        b_u: 1.5,
        a_e: 2.5,
        b_e: 2.0,
        a_s: 3.0,
        b_s: 1.0,
        alpha: vec![vec![0.5, 0.2], vec![0.2, 0.5]],
        sigma2_w: 1.5,
    };
    Fixture { data, state, hyper }
}

/// Residual y_j minus the mean parts, recomputed here from the model
/// definition; `skip` removes one component (0 none, 1 beta, 2 gamma, 3 u,
/// 4 delta).
fn fixture_residual(fx: &Fixture, j: usize, skip: usize) -> f64 {
    let mut r = fx.data.y()[j];
    if skip != 1 {
        r -= fx.state.beta[fx.state.x[j] - 1];
    }
    if skip != 4 {
        r -= fx.data.t()[(j, 0)] * fx.state.delta[0];
    }
    if skip != 2 {
        r -= fx.state.w[(j, 0)] * fx.state.gamma[0];
    }
    if skip != 3 {
        r -= fx.state.u[fx.data.area()[j]];
    }
    r
}

/// Rerun each full-conditional update `reps` times on the frozen fixture and
/// compare the empirical moments of every sampled block against closed-form
/// conditional moments.
#[allow(clippy::needless_range_loop)]
pub fn conjugacy_suite(reps: usize, seed: u64) -> Result<ValidationReport> {
    let fx = fixture();
    let mut stream = RngStream::new(seed);
    let mut checks = Vec::new();
    let n_units = fx.data.n_units();

    // (i) Latent categories: per-unit categorical probabilities.
    {
        let mut counts = vec![0usize; n_units];
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_x(&mut s, &fx.data, &mut stream)?;
            for (j, &x) in s.x.iter().enumerate() {
                if x == 1 {
                    counts[j] += 1;
                }
            }
        }
        for j in 0..n_units {
            let base = fixture_residual(&fx, j, 1);
            let z = fx.data.z()[j];
            let weight = |cat: usize| -> f64 {
                fx.state.p_matrix.prob(cat, z)
                    * (-(base - fx.state.beta[cat - 1]).powi(2) / (2.0 * fx.state.sigma2_e)).exp()
            };
            let p1 = weight(1) / (weight(1) + weight(2));
            let freq = counts[j] as f64 / reps as f64;
            checks.push(CheckResult {
                name: format!("x unit {j} P(x=1)"),
                observed: freq,
                expected: p1,
                tolerance: 5.0 * (p1 * (1.0 - p1) / reps as f64).sqrt(),
            });
        }
    }

    // (ii) beta: diagonal K-variate Gaussian.
    {
        let mut draws = [Vec::with_capacity(reps), Vec::with_capacity(reps)];
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_beta(&mut s, &fx.data, &fx.hyper, &mut stream)?;
            draws[0].push(s.beta[0]);
            draws[1].push(s.beta[1]);
        }
        for k in 0..2 {
            let mut count = 0.0;
            let mut rsum = 0.0;
            for j in 0..n_units {
                if fx.state.x[j] == k + 1 {
                    count += 1.0;
                    rsum += fixture_residual(&fx, j, 1);
                }
            }
            let q = count / fx.state.sigma2_e + 1.0 / fx.hyper.sigma2_beta[k];
            let b = rsum / fx.state.sigma2_e + fx.hyper.mu_beta[k] / fx.hyper.sigma2_beta[k];
            checks.extend(moment_checks(
                &format!("beta[{k}]"),
                &draws[k],
                b / q,
                1.0 / q,
            ));
        }
    }

    // (iii) delta: scalar Gaussian.
    {
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_delta(&mut s, &fx.data, &fx.hyper, &mut stream)?;
            draws.push(s.delta[0]);
        }
        let mut tt = 0.0;
        let mut tr = 0.0;
        for j in 0..n_units {
            let t = fx.data.t()[(j, 0)];
            tt += t * t;
            tr += t * fixture_residual(&fx, j, 4);
        }
        let q = tt / fx.state.sigma2_e + 1.0 / fx.hyper.sigma2_delta[0];
        let b = tr / fx.state.sigma2_e + fx.hyper.mu_delta[0] / fx.hyper.sigma2_delta[0];
        checks.extend(moment_checks("delta", &draws, b / q, 1.0 / q));
    }

    // (iv) gamma: scalar Gaussian.
    {
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_gamma(&mut s, &fx.data, &fx.hyper, &mut stream)?;
            draws.push(s.gamma[0]);
        }
        let mut ww = 0.0;
        let mut wr = 0.0;
        for j in 0..n_units {
            let w = fx.state.w[(j, 0)];
            ww += w * w;
            wr += w * fixture_residual(&fx, j, 2);
        }
        let q = ww / fx.state.sigma2_e + 1.0 / fx.hyper.sigma2_gamma[0];
        let b = wr / fx.state.sigma2_e + fx.hyper.mu_gamma[0] / fx.hyper.sigma2_gamma[0];
        checks.extend(moment_checks("gamma", &draws, b / q, 1.0 / q));
    }

    // (v) latent w: product of the three Gaussian factors, checked on unit 0.
    {
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_w(&mut s, &fx.data, &fx.hyper, &mut stream)?;
            draws.push(s.w[(0, 0)]);
        }
        let g = fx.state.gamma[0];
        let r = fx.data.y()[0]
            - fx.state.beta[fx.state.x[0] - 1]
            - fx.data.t()[(0, 0)] * fx.state.delta[0]
            - fx.state.u[0];
        let q = g * g / fx.state.sigma2_e + 1.0 / fx.state.sigma2_s + 1.0 / fx.hyper.sigma2_w;
        let b = g * r / fx.state.sigma2_e + fx.data.s()[(0, 0)] / fx.state.sigma2_s;
        checks.extend(moment_checks("w unit 0", &draws, b / q, 1.0 / q));
    }

    // (vi) sigma2_e precision: Gamma(a_e + N/2, b_e + SSR/2).
    {
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_sigma2_e(&mut s, &fx.data, &fx.hyper, &mut stream)?;
            draws.push(1.0 / s.sigma2_e);
        }
        let ssr: f64 = (0..n_units).map(|j| fixture_residual(&fx, j, 0).powi(2)).sum();
        let shape = fx.hyper.a_e + n_units as f64 / 2.0;
        let rate = fx.hyper.b_e + ssr / 2.0;
        checks.extend(moment_checks(
            "sigma2_e precision",
            &draws,
            shape / rate,
            shape / (rate * rate),
        ));
    }

    // (vii) sigma2_u precision: Gamma(a_u + m/2, b_u + sum u² / 2).
    {
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_sigma2_u(&mut s, &fx.hyper, &mut stream)?;
            draws.push(1.0 / s.sigma2_u);
        }
        let ss: f64 = fx.state.u.iter().map(|u| u * u).sum();
        let shape = fx.hyper.a_u + 1.0;
        let rate = fx.hyper.b_u + ss / 2.0;
        checks.extend(moment_checks(
            "sigma2_u precision",
            &draws,
            shape / rate,
            shape / (rate * rate),
        ));
    }

    // (viii) sigma2_s precision: Gamma(a_s + Nq/2, b_s + sum (s-w)² / 2).
    {
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_sigma2_s(&mut s, &fx.data, &fx.hyper, &mut stream)?;
            draws.push(1.0 / s.sigma2_s);
        }
        let ss: f64 = (0..n_units)
            .map(|j| (fx.data.s()[(j, 0)] - fx.state.w[(j, 0)]).powi(2))
            .sum();
        let shape = fx.hyper.a_s + n_units as f64 / 2.0;
        let rate = fx.hyper.b_s + ss / 2.0;
        checks.extend(moment_checks(
            "sigma2_s precision",
            &draws,
            shape / rate,
            shape / (rate * rate),
        ));
    }

    // (ix) area effects: scalar Gaussians.
    {
        let mut draws = [Vec::with_capacity(reps), Vec::with_capacity(reps)];
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_u(&mut s, &fx.data, &mut stream)?;
            draws[0].push(s.u[0]);
            draws[1].push(s.u[1]);
        }
        for i in 0..2 {
            let units: Vec<usize> = (0..n_units).filter(|&j| fx.data.area()[j] == i).collect();
            let rsum: f64 = units.iter().map(|&j| fixture_residual(&fx, j, 3)).sum();
            let q = 1.0 / fx.state.sigma2_u + units.len() as f64 / fx.state.sigma2_e;
            checks.extend(moment_checks(
                &format!("u[{i}]"),
                &draws[i],
                rsum / fx.state.sigma2_e / q,
                1.0 / q,
            ));
        }
    }

    // (x) misclassification rows: Dirichlet moments.
    {
        let mut draws = [Vec::with_capacity(reps), Vec::with_capacity(reps)];
        for _ in 0..reps {
            let mut s = fx.state.clone();
            update_p_matrix(&mut s, &fx.data, &fx.hyper, &mut stream)?;
            draws[0].push(s.p_matrix.prob(1, 1));
            draws[1].push(s.p_matrix.prob(2, 1));
        }
        for row in 0..2 {
            let mut nu = vec![0.0; 2];
            for j in 0..n_units {
                if fx.state.x[j] == row + 1 {
                    nu[fx.data.z()[j] - 1] += 1.0;
                }
            }
            let alpha: Vec<f64> = fx.hyper.alpha[row]
                .iter()
                .zip(&nu)
                .map(|(a, c)| a + c)
                .collect();
            let total: f64 = alpha.iter().sum();
            let mean = alpha[0] / total;
            let var = mean * (1.0 - mean) / (total + 1.0);
            checks.extend(moment_checks(
                &format!("P row {} entry 1", row + 1),
                &draws[row],
                mean,
                var,
            ));
        }
    }

    Ok(ValidationReport { checks })
}

/// Effective sample size from the initial positive autocorrelations.
fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let (mean, var) = mean_var(xs);
    if var <= 0.0 {
        return n as f64;
    }
    let mut sum_rho = 0.0;
    for lag in 1..(n / 2).min(200) {
        let cov = (0..n - lag)
            .map(|i| (xs[i] - mean) * (xs[i + lag] - mean))
            .sum::<f64>()
            / (n - lag) as f64;
        let rho = cov / var;
        if rho < 0.05 {
            break;
        }
        sum_rho += rho;
    }
    n as f64 / (1.0 + 2.0 * sum_rho)
}

/// Two-sample z statistic; the second sample may be autocorrelated.
fn geweke_z(independent: &[f64], chain: &[f64]) -> f64 {
    let (m1, v1) = mean_var(independent);
    let (m2, v2) = mean_var(chain);
    let se2_1 = v1 / independent.len() as f64;
    let se2_2 = v2 / effective_sample_size(chain);
    (m1 - m2) / (se2_1 + se2_2).sqrt()
}

struct GewekeModel {
    hyper: HyperParams,
    m: usize,
    n_per_area: usize,
    k: usize,
}

impl GewekeModel {
    fn small() -> Self {
        GewekeModel {
            hyper: HyperParams {
                mu_beta: vec![0.0, 0.0],
                sigma2_beta: vec![1.0, 1.0],
                mu_delta: vec![],
                sigma2_delta: vec![],
                mu_gamma: vec![],
                sigma2_gamma: vec![],
                a_u: 6.0,
                b_u: 6.0,
                a_e: 6.0,
                b_e: 6.0,
                a_s: 6.0,
                b_s: 6.0,
                alpha: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
                sigma2_w: 1.0,
            },
            m: 3,
            n_per_area: 2,
            k: 2,
        }
    }

    fn n_units(&self) -> usize {
        self.m * self.n_per_area
    }

    fn prior_draw(&self, stream: &mut RngStream) -> Result<ParamState> {
        let mut beta = DVector::zeros(self.k);
        for i in 0..self.k {
            beta[i] =
                stream.draw_normal(self.hyper.mu_beta[i], self.hyper.sigma2_beta[i].sqrt())?;
        }
        let sigma2_e = 1.0 / stream.draw_gamma(self.hyper.a_e, self.hyper.b_e)?;
        let sigma2_u = 1.0 / stream.draw_gamma(self.hyper.a_u, self.hyper.b_u)?;
        let mut u = Vec::with_capacity(self.m);
        for _ in 0..self.m {
            u.push(stream.draw_normal(0.0, sigma2_u.sqrt())?);
        }
        let mut rows = Vec::with_capacity(self.k);
        for alpha in &self.hyper.alpha {
            rows.push(stream.draw_dirichlet(alpha)?);
        }
        let x = (0..self.n_units())
            .map(|_| stream.draw_uniform_int(1, self.k))
            .collect();
        Ok(ParamState {
            beta,
            delta: DVector::zeros(0),
            gamma: DVector::zeros(0),
            sigma2_e,
            sigma2_u,
            sigma2_s: 1.0,
            u,
            p_matrix: TransitionMatrix::new(rows)?,
            x,
            w: DMatrix::zeros(self.n_units(), 0),
        })
    }

    /// Draw (y, z) given the current parameters and latent categories.
    fn data_draw(&self, state: &ParamState, stream: &mut RngStream) -> Result<Dataset> {
        let n = self.n_units();
        let mut y = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut area = Vec::with_capacity(n);
        for j in 0..n {
            let i = j / self.n_per_area;
            area.push(i);
            let mean = state.beta[state.x[j] - 1] + state.u[i];
            y.push(stream.draw_normal(mean, state.sigma2_e.sqrt())?);
            z.push(stream.draw_categorical(state.p_matrix.row(state.x[j]))?);
        }
        validate_dataset(RawData {
            y,
            t: vec![],
            s: vec![],
            z,
            area,
            area_labels: (0..self.m).map(|i| format!("a{i}")).collect(),
            k: self.k,
        })
    }

    fn targets(&self, state: &ParamState) -> [f64; 5] {
        [
            state.beta[0],
            state.beta[1],
            state.sigma2_e,
            state.sigma2_u,
            state.u[0],
        ]
    }
}

const GEWEKE_TARGETS: [&str; 5] = ["beta1", "beta2", "sigma2_e", "sigma2_u", "u1"];

/// Joint-distribution test on the small configuration (m=3, n_i=2, K=2,
/// p=q=0) with proper moderately informative priors. Produces z-scores for
/// the first and second moments of beta1, beta2, sigma2_e, sigma2_u and u1;
/// each must satisfy |z| < 4.
pub fn geweke_suite(n_samples: usize, seed: u64) -> Result<ValidationReport> {
    let model = GewekeModel::small();
    let mut stream = RngStream::new(seed);

    // Marginal-conditional: independent prior draws.
    let mut mc = vec![Vec::with_capacity(n_samples); GEWEKE_TARGETS.len()];
    for _ in 0..n_samples {
        let state = model.prior_draw(&mut stream)?;
        for (acc, value) in mc.iter_mut().zip(model.targets(&state)) {
            acc.push(value);
        }
    }

    // Successive-conditional: redraw data, then one Gibbs sweep, repeatedly.
    let mut sc = vec![Vec::with_capacity(n_samples); GEWEKE_TARGETS.len()];
    let mut state = model.prior_draw(&mut stream)?;
    for _ in 0..n_samples {
        let data = model.data_draw(&state, &mut stream)?;
        gibbs_sweep(&mut state, &data, &model.hyper, ModelMode::Proposed, &mut stream)?;
        for (acc, value) in sc.iter_mut().zip(model.targets(&state)) {
            acc.push(value);
        }
    }

    let mut checks = Vec::new();
    for (t, name) in GEWEKE_TARGETS.iter().enumerate() {
        checks.push(CheckResult {
            name: format!("geweke {name} first moment z"),
            observed: geweke_z(&mc[t], &sc[t]),
            expected: 0.0,
            tolerance: 4.0,
        });
        let mc2: Vec<f64> = mc[t].iter().map(|x| x * x).collect();
        let sc2: Vec<f64> = sc[t].iter().map(|x| x * x).collect();
        checks.push(CheckResult {
            name: format!("geweke {name} second moment z"),
            observed: geweke_z(&mc2, &sc2),
            expected: 0.0,
            tolerance: 4.0,
        });
    }
    Ok(ValidationReport { checks })
}
