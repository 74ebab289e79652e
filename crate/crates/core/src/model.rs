//! Domain types and model arithmetic: datasets, hyperparameters, the
//! parameter state of one Gibbs chain, the linear predictor and the
//! complete-data log-likelihood.
//!
//! Unit records carry a response `y`, error-free covariates `t` (length p),
//! observed noisy continuous covariates `s` (length q, stored centered) and an
//! observed category `z` in 1..=K. The latent true category `x` and latent
//! true continuous covariates `w` live in [`ParamState`] and are sampled by
//! the Gibbs engine. Category indices are 1-based throughout; area indices
//! are 0-based.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-10;
const LN_2PI: f64 = 1.8378770664093453;

/// Raw ingested columns before validation and centering.
///
/// `t` and `s` may be empty vectors when the model has no such covariates;
/// otherwise they must hold one row per unit.
#[derive(Debug, Clone, Default)]
pub struct RawData {
    pub y: Vec<f64>,
    pub t: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    /// Observed (possibly misclassified) category per unit, 1..=K.
    pub z: Vec<usize>,
    /// Area index per unit, 0..m.
    pub area: Vec<usize>,
    pub area_labels: Vec<String>,
    pub k: usize,
}

/// Validated unit-level data grouped into m areas.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    t: DMatrix<f64>,
    s: DMatrix<f64>,
    z: Vec<usize>,
    area: Vec<usize>,
    area_labels: Vec<String>,
    area_units: Vec<Vec<usize>>,
    k: usize,
    s_offsets: Vec<f64>,
    true_x: Option<Vec<usize>>,
}

impl Dataset {
    pub fn n_units(&self) -> usize {
        self.y.len()
    }

    pub fn n_areas(&self) -> usize {
        self.area_labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.t.ncols()
    }

    pub fn q(&self) -> usize {
        self.s.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Centered noisy continuous covariates.
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    pub fn area(&self) -> &[usize] {
        &self.area
    }

    pub fn area_label(&self, i: usize) -> &str {
        &self.area_labels[i]
    }

    pub fn area_labels(&self) -> &[String] {
        &self.area_labels
    }

    /// Unit indices belonging to area `i`.
    pub fn area_units(&self, i: usize) -> &[usize] {
        &self.area_units[i]
    }

    pub fn area_sizes(&self) -> Vec<usize> {
        self.area_units.iter().map(Vec::len).collect()
    }

    /// Column means subtracted from the raw `s` columns.
    pub fn s_offsets(&self) -> &[f64] {
        &self.s_offsets
    }

    /// True categories, available only for simulated data.
    pub fn true_x(&self) -> Option<&[usize]> {
        self.true_x.as_deref()
    }

    /// Attach the simulation truth for the latent categories.
    pub fn with_true_categories(mut self, true_x: Vec<usize>) -> Result<Self> {
        if true_x.len() != self.n_units() {
            return Err(Error::Shape(format!(
                "true categories: got {} entries for {} units",
                true_x.len(),
                self.n_units()
            )));
        }
        if let Some(pos) = true_x.iter().position(|&x| x < 1 || x > self.k) {
            return Err(Error::CategoryDomain(format!(
                "true category {} at unit {pos} outside 1..={}",
                true_x[pos], self.k
            )));
        }
        self.true_x = Some(true_x);
        Ok(self)
    }

}

/// Validate raw columns, center the continuous error-prone covariates and
/// build a [`Dataset`]. All violations are collected and reported together
/// with unit coordinates.
pub fn validate_dataset(raw: RawData) -> Result<Dataset> {
    let n = raw.y.len();
    let mut violations = Vec::new();

    if n == 0 {
        violations.push("no unit records".to_string());
    }
    if raw.k == 0 {
        violations.push("number of categories K must be at least 1".to_string());
    }
    if raw.area_labels.is_empty() {
        violations.push("no areas defined".to_string());
    }

    let p = raw.t.first().map_or(0, Vec::len);
    let q = raw.s.first().map_or(0, Vec::len);
    if !raw.t.is_empty() && raw.t.len() != n {
        violations.push(format!("t has {} rows for {n} units", raw.t.len()));
    }
    if !raw.s.is_empty() && raw.s.len() != n {
        violations.push(format!("s has {} rows for {n} units", raw.s.len()));
    }
    if raw.z.len() != n {
        violations.push(format!("z has {} entries for {n} units", raw.z.len()));
    }
    if raw.area.len() != n {
        violations.push(format!("area has {} entries for {n} units", raw.area.len()));
    }
    if !violations.is_empty() {
        return Err(Error::InvalidData { violations });
    }

    let m = raw.area_labels.len();
    let coord = |j: usize| -> String {
        format!("unit {j} (area {})", raw.area_labels[raw.area[j].min(m - 1)])
    };

    for j in 0..n {
        if !raw.y[j].is_finite() {
            violations.push(format!("{}: non-finite response {}", coord(j), raw.y[j]));
        }
        if !raw.t.is_empty() {
            if raw.t[j].len() != p {
                violations.push(format!(
                    "{}: t row has {} columns, expected {p}",
                    coord(j),
                    raw.t[j].len()
                ));
            } else if let Some(c) = raw.t[j].iter().position(|v| !v.is_finite()) {
                violations.push(format!("{}: non-finite t[{c}]", coord(j)));
            }
        }
        if !raw.s.is_empty() {
            if raw.s[j].len() != q {
                violations.push(format!(
                    "{}: s row has {} columns, expected {q}",
                    coord(j),
                    raw.s[j].len()
                ));
            } else if let Some(c) = raw.s[j].iter().position(|v| !v.is_finite()) {
                violations.push(format!("{}: non-finite s[{c}]", coord(j)));
            }
        }
        if raw.z[j] < 1 || raw.z[j] > raw.k {
            violations.push(format!(
                "{}: observed category {} outside 1..={}",
                coord(j),
                raw.z[j],
                raw.k
            ));
        }
        if raw.area[j] >= m {
            violations.push(format!("unit {j}: area index {} outside 0..{m}", raw.area[j]));
        }
    }

    let mut area_units = vec![Vec::new(); m];
    for (j, &a) in raw.area.iter().enumerate() {
        if a < m {
            area_units[a].push(j);
        }
    }
    for (i, units) in area_units.iter().enumerate() {
        if units.is_empty() {
            violations.push(format!("area {} has no units", raw.area_labels[i]));
        }
    }

    if !violations.is_empty() {
        return Err(Error::InvalidData { violations });
    }

    let t = if p == 0 {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_fn(n, p, |r, c| raw.t[r][c])
    };
    let mut s = if q == 0 {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_fn(n, q, |r, c| raw.s[r][c])
    };
    let mut s_offsets = vec![0.0; q];
    for c in 0..q {
        let mean = s.column(c).sum() / n as f64;
        s_offsets[c] = mean;
        for r in 0..n {
            s[(r, c)] -= mean;
        }
    }

    Ok(Dataset {
        y: DVector::from_vec(raw.y),
        t,
        s,
        z: raw.z,
        area: raw.area,
        area_labels: raw.area_labels,
        area_units,
        k: raw.k,
        s_offsets,
        true_x: None,
    })
}

/// Fixed prior constants. Gamma priors are on precisions in shape-rate form,
/// so the variance-component conditionals read Gamma(a + n/2, b + SS/2).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub mu_beta: Vec<f64>,
    pub sigma2_beta: Vec<f64>,
    pub mu_delta: Vec<f64>,
    pub sigma2_delta: Vec<f64>,
    pub mu_gamma: Vec<f64>,
    pub sigma2_gamma: Vec<f64>,
    pub a_u: f64,
    pub b_u: f64,
    pub a_e: f64,
    pub b_e: f64,
    pub a_s: f64,
    pub b_s: f64,
    /// K×K Dirichlet parameters, one row per true category.
    pub alpha: Vec<Vec<f64>>,
    /// Known variance of the latent continuous covariates.
    pub sigma2_w: f64,
}

impl HyperParams {
    /// Flat defaults: zero prior means, variance 1e6 on regression blocks,
    /// a = b = 0.001 on all precisions, the diagonally dominant 0.5/0.2
    /// Dirichlet pattern and sigma2_w = 1.
    pub fn flat(k: usize, p: usize, q: usize) -> Self {
        HyperParams {
            mu_beta: vec![0.0; k],
            sigma2_beta: vec![1e6; k],
            mu_delta: vec![0.0; p],
            sigma2_delta: vec![1e6; p],
            mu_gamma: vec![0.0; q],
            sigma2_gamma: vec![1e6; q],
            a_u: 0.001,
            b_u: 0.001,
            a_e: 0.001,
            b_e: 0.001,
            a_s: 0.001,
            b_s: 0.001,
            alpha: default_alpha(k),
            sigma2_w: 1.0,
        }
    }

    pub fn validate(&self, k: usize, p: usize, q: usize) -> Result<()> {
        let check_len = |name: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::Shape(format!("{name} has length {got}, expected {want}")));
            }
            Ok(())
        };
        check_len("mu_beta", self.mu_beta.len(), k)?;
        check_len("sigma2_beta", self.sigma2_beta.len(), k)?;
        check_len("mu_delta", self.mu_delta.len(), p)?;
        check_len("sigma2_delta", self.sigma2_delta.len(), p)?;
        check_len("mu_gamma", self.mu_gamma.len(), q)?;
        check_len("sigma2_gamma", self.sigma2_gamma.len(), q)?;
        check_len("alpha", self.alpha.len(), k)?;

        let positive = |name: &str, v: f64| -> Result<()> {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::ParamDomain(format!("{name} must be positive, got {v}")));
            }
            Ok(())
        };
        for (name, vs) in [
            ("sigma2_beta", &self.sigma2_beta),
            ("sigma2_delta", &self.sigma2_delta),
            ("sigma2_gamma", &self.sigma2_gamma),
        ] {
            for &v in vs.iter() {
                positive(name, v)?;
            }
        }
        positive("a_u", self.a_u)?;
        positive("b_u", self.b_u)?;
        positive("a_e", self.a_e)?;
        positive("b_e", self.b_e)?;
        positive("a_s", self.a_s)?;
        positive("b_s", self.b_s)?;
        positive("sigma2_w", self.sigma2_w)?;
        for (r, row) in self.alpha.iter().enumerate() {
            check_len(&format!("alpha row {r}"), row.len(), k)?;
            for &v in row {
                positive("alpha entry", v)?;
            }
        }
        Ok(())
    }

    /// Prior mean of each misclassification row, alpha normalized row-wise.
    pub fn alpha_row_means(&self) -> Vec<Vec<f64>> {
        self.alpha
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                row.iter().map(|a| a / total).collect()
            })
            .collect()
    }
}

/// The 0.5-diagonal / 0.2-adjacent Dirichlet pattern, with the leftover mass
/// spread uniformly over the remaining categories of each row.
pub fn default_alpha(k: usize) -> Vec<Vec<f64>> {
    patterned_alpha(k, 0.5, 0.2).expect("default pattern is valid")
}

/// Dirichlet prior rows with `diag` on the diagonal, `neighbor` on the
/// adjacent categories and the leftover mass uniform on the rest.
pub fn patterned_alpha(k: usize, diag: f64, neighbor: f64) -> Result<Vec<Vec<f64>>> {
    if !(diag > 0.0 && neighbor > 0.0) || !diag.is_finite() || !neighbor.is_finite() {
        return Err(Error::ParamDomain(format!(
            "alpha pattern needs positive diagonal and neighbor masses, got {diag}, {neighbor}"
        )));
    }
    if k == 1 {
        return Ok(vec![vec![1.0]]);
    }
    let mut alpha = vec![vec![0.0; k]; k];
    for r in 0..k {
        let mut assigned = diag;
        alpha[r][r] = diag;
        if r > 0 {
            alpha[r][r - 1] = neighbor;
            assigned += neighbor;
        }
        if r + 1 < k {
            alpha[r][r + 1] = neighbor;
            assigned += neighbor;
        }
        let rest: Vec<usize> = (0..k).filter(|&c| alpha[r][c] == 0.0).collect();
        if !rest.is_empty() {
            let share = (1.0 - assigned) / rest.len() as f64;
            if share <= 0.0 {
                return Err(Error::ParamDomain(format!(
                    "alpha pattern ({diag}, {neighbor}) leaves no mass for the \
                     remaining categories of row {r}"
                )));
            }
            for c in rest {
                alpha[r][c] = share;
            }
        }
    }
    Ok(alpha)
}

/// K×K row-stochastic misclassification matrix; entry (k', k) is the
/// probability of observing category k when the true category is k'.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::Shape("transition matrix has no rows".into()));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape(format!(
                    "transition matrix row {r} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(Error::ParamDomain(format!(
                    "transition matrix row {r} has entries outside [0,1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::ParamDomain(format!(
                    "transition matrix row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(TransitionMatrix { rows })
    }

    pub fn identity(k: usize) -> Self {
        let rows = (0..k)
            .map(|r| (0..k).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
            .collect();
        TransitionMatrix { rows }
    }

    /// Diagonal p with the off-diagonal mass spread uniformly; the
    /// perturbation matrix used by the simulation study.
    pub fn diagonal(k: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ParamDomain(format!("diagonal probability {p} outside [0,1]")));
        }
        if k == 1 {
            return Ok(TransitionMatrix::identity(1));
        }
        let off = (1.0 - p) / (k - 1) as f64;
        let rows = (0..k)
            .map(|r| (0..k).map(|c| if r == c { p } else { off }).collect())
            .collect();
        Ok(TransitionMatrix { rows })
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    /// P(Z = observed | X = true); both indices 1-based.
    pub fn prob(&self, true_cat: usize, observed_cat: usize) -> f64 {
        self.rows[true_cat - 1][observed_cat - 1]
    }

    /// Row for a 1-based true category.
    pub fn row(&self, true_cat: usize) -> &[f64] {
        &self.rows[true_cat - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn set_row(&mut self, true_cat: usize, row: Vec<f64>) -> Result<()> {
        let k = self.k();
        if row.len() != k {
            return Err(Error::Shape(format!(
                "row has {} entries, expected {k}",
                row.len()
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|p| *p < 0.0) {
            return Err(Error::ParamDomain(format!(
                "replacement row for category {true_cat} is not a probability vector"
            )));
        }
        self.rows[true_cat - 1] = row;
        Ok(())
    }
}

/// Full parameter vector of one Gibbs state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub beta: DVector<f64>,
    pub delta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub sigma2_e: f64,
    pub sigma2_u: f64,
    pub sigma2_s: f64,
    /// Area random effects, length m.
    pub u: Vec<f64>,
    pub p_matrix: TransitionMatrix,
    /// Latent true category per unit, 1..=K.
    pub x: Vec<usize>,
    /// Latent true continuous covariates, N×q.
    pub w: DMatrix<f64>,
}

impl ParamState {
    pub fn check_invariants(&self, data: &Dataset) -> Result<()> {
        if self.sigma2_e <= 0.0 || self.sigma2_u <= 0.0 || self.sigma2_s <= 0.0 {
            return Err(Error::ParamDomain(format!(
                "non-positive variance component: sigma2_e={}, sigma2_u={}, sigma2_s={}",
                self.sigma2_e, self.sigma2_u, self.sigma2_s
            )));
        }
        if let Some(pos) = self.x.iter().position(|&x| x < 1 || x > data.k()) {
            return Err(Error::CategoryDomain(format!(
                "latent category {} at unit {pos} outside 1..={}",
                self.x[pos],
                data.k()
            )));
        }
        for r in 1..=self.p_matrix.k() {
            let sum: f64 = self.p_matrix.row(r).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::ParamDomain(format!(
                    "misclassification row {r} sums to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// Which estimator the chain runs.
///
/// `Naive` treats the observed z and s as exact (no latent updates);
/// `TrueX` uses the supplied true categories (simulation only); `Proposed`
/// samples both latent blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    Proposed,
    Naive,
    TrueX,
}

impl ModelMode {
    pub fn categorical_latent(self) -> bool {
        matches!(self, ModelMode::Proposed)
    }

    pub fn continuous_latent(self) -> bool {
        matches!(self, ModelMode::Proposed)
    }
}

impl std::fmt::Display for ModelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelMode::Proposed => write!(f, "proposed"),
            ModelMode::Naive => write!(f, "naive"),
            ModelMode::TrueX => write!(f, "true-x"),
        }
    }
}

impl std::str::FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(ModelMode::Proposed),
            "naive" => Ok(ModelMode::Naive),
            "true-x" | "truex" | "true" => Ok(ModelMode::TrueX),
            other => Err(Error::Config(format!("unknown model mode '{other}'"))),
        }
    }
}

/// N×K indicator matrix of the latent categories under the ANOVA
/// parameterization (one column per category, no intercept).
pub fn build_design_matrix(x: &[usize], k: usize) -> Result<DMatrix<f64>> {
    if let Some(pos) = x.iter().position(|&c| c < 1 || c > k) {
        return Err(Error::CategoryDomain(format!(
            "category {} at position {pos} outside 1..={k}",
            x[pos]
        )));
    }
    let mut m = DMatrix::zeros(x.len(), k);
    for (r, &c) in x.iter().enumerate() {
        m[(r, c - 1)] = 1.0;
    }
    Ok(m)
}

/// Unit-level mean: beta_{x_ij} + t'delta + w'gamma + u_i.
pub fn linear_predictor(state: &ParamState, data: &Dataset, unit: usize) -> Result<f64> {
    if state.beta.len() != data.k()
        || state.delta.len() != data.p()
        || state.gamma.len() != data.q()
        || state.u.len() != data.n_areas()
        || state.x.len() != data.n_units()
        || state.w.nrows() != data.n_units()
        || state.w.ncols() != data.q()
    {
        return Err(Error::Shape(format!(
            "state dimensions do not match dataset (K={}, p={}, q={}, m={}, N={})",
            data.k(),
            data.p(),
            data.q(),
            data.n_areas(),
            data.n_units()
        )));
    }
    if unit >= data.n_units() {
        return Err(Error::Shape(format!("unit index {unit} out of range")));
    }
    Ok(linear_predictor_unchecked(state, data, unit))
}

pub(crate) fn linear_predictor_unchecked(state: &ParamState, data: &Dataset, unit: usize) -> f64 {
    let mut theta = state.beta[state.x[unit] - 1] + state.u[data.area()[unit]];
    for c in 0..data.p() {
        theta += data.t()[(unit, c)] * state.delta[c];
    }
    for c in 0..data.q() {
        theta += state.w[(unit, c)] * state.gamma[c];
    }
    theta
}

fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - (x - mean).powi(2) / (2.0 * var)
}

/// Complete-data joint log-density of (y, s, w, x, u) given the parameters:
/// per unit log N(y|theta, sigma2_e) + log N(s|w, sigma2_s I) +
/// log N(w|0, sigma2_w I) + log p_{x,z} - log K, plus the area terms
/// log N(u_i|0, sigma2_u). The uniform 1/K prior on the latent category is
/// fixed by the model. Returns -inf when the state puts zero mass on an
/// observed pair (z, x).
pub fn log_complete_likelihood(
    state: &ParamState,
    data: &Dataset,
    hyper: &HyperParams,
) -> Result<f64> {
    if state.sigma2_e <= 0.0 || state.sigma2_u <= 0.0 || state.sigma2_s <= 0.0 {
        return Err(Error::ParamDomain(format!(
            "log_complete_likelihood needs positive variances, got sigma2_e={}, sigma2_u={}, sigma2_s={}",
            state.sigma2_e, state.sigma2_u, state.sigma2_s
        )));
    }
    // Reuse the dimension checks.
    linear_predictor(state, data, 0)?;

    let q = data.q();
    let ln_k = (data.k() as f64).ln();
    let mut ll = 0.0;
    for j in 0..data.n_units() {
        let theta = linear_predictor_unchecked(state, data, j);
        ll += ln_normal_pdf(data.y()[j], theta, state.sigma2_e);
        for c in 0..q {
            ll += ln_normal_pdf(data.s()[(j, c)], state.w[(j, c)], state.sigma2_s);
            ll += ln_normal_pdf(state.w[(j, c)], 0.0, hyper.sigma2_w);
        }
        ll += state.p_matrix.prob(state.x[j], data.z()[j]).ln();
        ll -= ln_k;
    }
    for &ui in &state.u {
        ll += ln_normal_pdf(ui, 0.0, state.sigma2_u);
    }
    Ok(ll)
}
