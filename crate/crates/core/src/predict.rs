//! Small-area mean prediction from retained draws, posterior summaries with
//! equal-tailed credible intervals, and latent-category recovery.
//!
//! The area predictor is theta_i = sum_k F_ik beta_k + t_bar'delta +
//! s_bar'gamma, evaluated per retained draw. Category frequencies F_i can be
//! supplied externally (population values); when absent they are taken from
//! the draw's own latent categories, which reduces to the observed-z
//! frequencies in naive mode and to the true frequencies in true-x mode. The
//! area random effect is excluded by default and available behind a flag.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gibbs::ChainOutput;
use crate::model::Dataset;

/// Per-area population quantities feeding the area-mean predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaPopulationSummary {
    f: Option<Vec<f64>>,
    t_bar: Vec<f64>,
    s_bar: Vec<f64>,
    n_pop: Option<usize>,
}

impl AreaPopulationSummary {
    /// Fixed category frequencies (must lie on the simplex) plus covariate means.
    pub fn with_frequencies(f: Vec<f64>, t_bar: Vec<f64>, s_bar: Vec<f64>) -> Result<Self> {
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::ParamDomain(format!(
                "area frequencies must be nonnegative, got {f:?}"
            )));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::ParamDomain(format!(
                "area frequencies sum to {sum}, expected 1"
            )));
        }
        Ok(AreaPopulationSummary {
            f: Some(f),
            t_bar,
            s_bar,
            n_pop: None,
        })
    }

    /// Take category frequencies from each draw's latent categories.
    pub fn latent(t_bar: Vec<f64>, s_bar: Vec<f64>) -> Self {
        AreaPopulationSummary {
            f: None,
            t_bar,
            s_bar,
            n_pop: None,
        }
    }

    /// Latent frequencies and no covariate terms.
    pub fn latent_only() -> Self {
        AreaPopulationSummary::latent(Vec::new(), Vec::new())
    }

    pub fn with_population_size(mut self, n: usize) -> Self {
        self.n_pop = Some(n);
        self
    }

    pub fn frequencies(&self) -> Option<&[f64]> {
        self.f.as_deref()
    }

    pub fn uses_latent_frequencies(&self) -> bool {
        self.f.is_none()
    }
}

/// Posterior mean, sd and equal-tailed credible interval of one scalar target.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Area-mean draws: an m × (number of retained draws) matrix with entry
/// (i, g) holding theta_i under draw g.
pub fn predict_area_means(
    chain: &ChainOutput,
    data: &Dataset,
    targets: &[AreaPopulationSummary],
    include_area_effect: bool,
) -> Result<DMatrix<f64>> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    let m = data.n_areas();
    if targets.len() != m {
        return Err(Error::Config(format!(
            "got {} area targets for {m} areas",
            targets.len()
        )));
    }
    let k = data.k();
    for (i, target) in targets.iter().enumerate() {
        if let Some(f) = target.frequencies() {
            if f.len() != k {
                return Err(Error::Shape(format!(
                    "area {i}: frequency vector has length {}, expected K={k}",
                    f.len()
                )));
            }
        }
        if target.t_bar.len() != data.p() || target.s_bar.len() != data.q() {
            return Err(Error::Shape(format!(
                "area {i}: covariate means have lengths ({}, {}), expected (p={}, q={})",
                target.t_bar.len(),
                target.s_bar.len(),
                data.p(),
                data.q()
            )));
        }
    }
    let first = &chain.states[0];
    if first.x.len() != data.n_units() || first.beta.len() != k {
        return Err(Error::Shape(
            "chain states do not match the dataset dimensions".into(),
        ));
    }

    let n_draws = chain.len();
    let mut theta = DMatrix::zeros(m, n_draws);
    let mut freq = vec![0.0; k];
    for (g, state) in chain.states.iter().enumerate() {
        for (i, target) in targets.iter().enumerate() {
            let f: &[f64] = match target.frequencies() {
                Some(f) => f,
                None => {
                    let units = data.area_units(i);
                    freq.iter_mut().for_each(|v| *v = 0.0);
                    for &j in units {
                        freq[state.x[j] - 1] += 1.0;
                    }
                    let n = units.len() as f64;
                    freq.iter_mut().for_each(|v| *v /= n);
                    &freq
                }
            };
            let mut value = 0.0;
            for (c, fc) in f.iter().enumerate() {
                value += fc * state.beta[c];
            }
            for (c, tb) in target.t_bar.iter().enumerate() {
                value += tb * state.delta[c];
            }
            for (c, sb) in target.s_bar.iter().enumerate() {
                value += sb * state.gamma[c];
            }
            if include_area_effect {
                value += state.u[i];
            }
            theta[(i, g)] = value;
        }
    }
    Ok(theta)
}

/// Empirical quantile with linear interpolation between order statistics
/// (h = (n-1)p, the R type-7 convention). Input must be sorted.
pub(crate) fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Mean, sd and the equal-tailed interval at the given level.
pub fn summarize(draws: &[f64], level: f64) -> Result<PosteriorSummary> {
    if draws.is_empty() {
        return Err(Error::EmptyChain);
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::Config(format!(
            "credible level {level} outside (0, 1)"
        )));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = if draws.len() < 2 {
        0.0
    } else {
        (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite draw"));
    let tail = (1.0 - level) / 2.0;
    Ok(PosteriorSummary {
        mean,
        sd,
        lower: quantile_sorted(&sorted, tail),
        upper: quantile_sorted(&sorted, 1.0 - tail),
    })
}

/// Posterior category probabilities and the modal category per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRecovery {
    /// Per unit, the empirical frequency of each category across draws.
    pub probabilities: Vec<Vec<f64>>,
    /// Per unit, the most frequent category (ties broken by smallest index).
    pub modal: Vec<usize>,
}

impl CategoryRecovery {
    /// Fraction of units whose modal category equals the supplied truth.
    pub fn agreement_with(&self, truth: &[usize]) -> Result<f64> {
        if truth.len() != self.modal.len() {
            return Err(Error::Shape(format!(
                "truth has {} entries for {} units",
                truth.len(),
                self.modal.len()
            )));
        }
        let hits = self
            .modal
            .iter()
            .zip(truth)
            .filter(|(m, t)| m == t)
            .count();
        Ok(hits as f64 / self.modal.len() as f64)
    }
}

pub fn recover_categories(chain: &ChainOutput) -> Result<CategoryRecovery> {
    if chain.is_empty() {
        return Err(Error::EmptyChain);
    }
    let n_units = chain.states[0].x.len();
    let k = chain.states[0].beta.len();
    let n_draws = chain.len() as f64;
    let mut probabilities = vec![vec![0.0; k]; n_units];
    for state in &chain.states {
        for (j, &cat) in state.x.iter().enumerate() {
            probabilities[j][cat - 1] += 1.0;
        }
    }
    let mut modal = Vec::with_capacity(n_units);
    for probs in probabilities.iter_mut() {
        probs.iter_mut().for_each(|p| *p /= n_draws);
        let mut best = 0;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = c;
            }
        }
        modal.push(best + 1);
    }
    Ok(CategoryRecovery {
        probabilities,
        modal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_dataset, ModelMode, ParamState, RawData, TransitionMatrix};
    use crate::rng::RngStream;
    use nalgebra::DVector;

    fn chain_from_states(states: Vec<ParamState>) -> ChainOutput {
        ChainOutput {
            log_likelihood: vec![0.0; states.len()],
            states,
            mode: ModelMode::Proposed,
            seed: 0,
        }
    }

    fn dataset(k: usize, z: Vec<usize>, area: Vec<usize>, m: usize) -> Dataset {
        let n = z.len();
        validate_dataset(RawData {
            y: vec![0.0; n],
            t: vec![],
            s: vec![],
            z,
            area,
            area_labels: (0..m).map(|i| format!("a{i}")).collect(),
            k,
        })
        .unwrap()
    }

    fn state(beta: &[f64], x: Vec<usize>, u: Vec<f64>) -> ParamState {
        let k = beta.len();
        let n = x.len();
        ParamState {
            beta: DVector::from_row_slice(beta),
            delta: DVector::zeros(0),
            gamma: DVector::zeros(0),
            sigma2_e: 1.0,
            sigma2_u: 1.0,
            sigma2_s: 1.0,
            u,
            p_matrix: TransitionMatrix::identity(k),
            x,
            w: DMatrix::zeros(n, 0),
        }
    }

    #[test]
    fn single_category_prediction_is_beta() {
        let data = dataset(1, vec![1, 1], vec![0, 0], 1);
        let s = state(&[4.5], vec![1, 1], vec![0.7]);
        let chain = chain_from_states(vec![s]);
        let targets = vec![AreaPopulationSummary::with_frequencies(vec![1.0], vec![], vec![]).unwrap()];
        let theta = predict_area_means(&chain, &data, &targets, false).unwrap();
        assert_eq!(theta[(0, 0)], 4.5);
        let with_u = predict_area_means(&chain, &data, &targets, true).unwrap();
        assert!((with_u[(0, 0)] - 5.2).abs() < 1e-12);
    }

    #[test]
    fn equal_frequencies_give_mean_of_betas() {
        let data = dataset(3, vec![1, 2, 3], vec![0, 0, 0], 1);
        let s = state(&[50.0, 5.0, -10.0], vec![1, 2, 3], vec![0.0]);
        let chain = chain_from_states(vec![s.clone(), s]);
        let f = vec![1.0 / 3.0; 3];
        let targets =
            vec![AreaPopulationSummary::with_frequencies(f, vec![], vec![]).unwrap()];
        let theta = predict_area_means(&chain, &data, &targets, false).unwrap();
        for g in 0..2 {
            assert!((theta[(0, g)] - 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_is_invariant_under_label_permutation() {
        let data = dataset(3, vec![1, 2, 3], vec![0, 0, 0], 1);
        let s1 = state(&[50.0, 5.0, -10.0], vec![1, 2, 3], vec![0.0]);
        let s2 = state(&[-10.0, 50.0, 5.0], vec![1, 2, 3], vec![0.0]);
        let t1 = vec![
            AreaPopulationSummary::with_frequencies(vec![0.5, 0.3, 0.2], vec![], vec![]).unwrap(),
        ];
        let t2 = vec![
            AreaPopulationSummary::with_frequencies(vec![0.2, 0.5, 0.3], vec![], vec![]).unwrap(),
        ];
        let a = predict_area_means(&chain_from_states(vec![s1]), &data, &t1, false).unwrap();
        let b = predict_area_means(&chain_from_states(vec![s2]), &data, &t2, false).unwrap();
        assert!((a[(0, 0)] - b[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn latent_frequencies_track_each_draw() {
        let data = dataset(2, vec![1, 1, 2, 2], vec![0, 0, 1, 1], 2);
        let s1 = state(&[10.0, -10.0], vec![1, 1, 2, 2], vec![0.0, 0.0]);
        let mut s2 = s1.clone();
        s2.x = vec![1, 2, 2, 2];
        let chain = chain_from_states(vec![s1, s2]);
        let targets = vec![
            AreaPopulationSummary::latent_only(),
            AreaPopulationSummary::latent_only(),
        ];
        let theta = predict_area_means(&chain, &data, &targets, false).unwrap();
        // Draw 0, area 0: frequencies (1, 0) → 10.
        assert!((theta[(0, 0)] - 10.0).abs() < 1e-12);
        // Draw 1, area 0: frequencies (0.5, 0.5) → 0.
        assert!((theta[(0, 1)] - 0.0).abs() < 1e-12);
        // Area 1 is all category 2 in both draws.
        assert!((theta[(1, 0)] + 10.0).abs() < 1e-12);
        assert!((theta[(1, 1)] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn prediction_is_linear_in_coefficients() {
        let data = dataset(2, vec![1, 2, 1], vec![0, 0, 0], 1);
        let sa = state(&[3.0, -1.0], vec![1, 2, 1], vec![0.0]);
        let sb = state(&[-0.5, 2.0], vec![1, 2, 1], vec![0.0]);
        let sum = state(&[2.5, 1.0], vec![1, 2, 1], vec![0.0]);
        let targets = vec![
            AreaPopulationSummary::with_frequencies(vec![0.7, 0.3], vec![], vec![]).unwrap(),
        ];
        let a = predict_area_means(&chain_from_states(vec![sa]), &data, &targets, false).unwrap();
        let b = predict_area_means(&chain_from_states(vec![sb]), &data, &targets, false).unwrap();
        let c = predict_area_means(&chain_from_states(vec![sum]), &data, &targets, false).unwrap();
        assert!((a[(0, 0)] + b[(0, 0)] - c[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn missing_targets_are_a_configuration_error() {
        let data = dataset(2, vec![1, 2], vec![0, 1], 2);
        let s = state(&[1.0, 2.0], vec![1, 2], vec![0.0, 0.0]);
        let chain = chain_from_states(vec![s]);
        let targets = vec![AreaPopulationSummary::latent_only()];
        assert!(matches!(
            predict_area_means(&chain, &data, &targets, false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_chain_is_rejected() {
        let data = dataset(2, vec![1, 2], vec![0, 0], 1);
        let chain = chain_from_states(vec![]);
        let targets = vec![AreaPopulationSummary::latent_only()];
        assert!(matches!(
            predict_area_means(&chain, &data, &targets, false),
            Err(Error::EmptyChain)
        ));
        assert!(matches!(summarize(&[], 0.95), Err(Error::EmptyChain)));
    }

    #[test]
    fn summarize_constant_draws() {
        let s = summarize(&[2.5; 10], 0.95).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.sd, 0.0);
        assert_eq!(s.lower, 2.5);
        assert_eq!(s.upper, 2.5);
    }

    #[test]
    fn summarize_quantile_convention() {
        let draws: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let s = summarize(&draws, 0.95).unwrap();
        assert!((s.lower - 3.475).abs() < 1e-9, "lower {}", s.lower);
        assert!((s.upper - 97.525).abs() < 1e-9, "upper {}", s.upper);
    }

    #[test]
    fn summarize_standard_normal_interval() {
        let mut stream = RngStream::new(2025);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| stream.draw_standard_normal())
            .collect();
        let s = summarize(&draws, 0.95).unwrap();
        assert!((s.lower + 1.96).abs() < 0.01, "lower {}", s.lower);
        assert!((s.upper - 1.96).abs() < 0.01, "upper {}", s.upper);
    }

    #[test]
    fn wider_level_contains_narrower_interval() {
        let mut stream = RngStream::new(8);
        let draws: Vec<f64> = (0..5000).map(|_| stream.draw_standard_normal()).collect();
        let s95 = summarize(&draws, 0.95).unwrap();
        let s99 = summarize(&draws, 0.99).unwrap();
        assert!(s99.lower <= s95.lower);
        assert!(s99.upper >= s95.upper);
    }

    #[test]
    fn recovery_counts_probabilities() {
        // Unit 0 draws (1, 1, 2); unit 1 draws (2, 2, 1).
        let draws_x = [vec![1, 2], vec![1, 2], vec![2, 1]];
        let states: Vec<ParamState> = draws_x
            .iter()
            .map(|x| state(&[0.0, 0.0, 0.0], x.clone(), vec![0.0]))
            .collect();
        let chain = chain_from_states(states);
        let rec = recover_categories(&chain).unwrap();
        assert!((rec.probabilities[0][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((rec.probabilities[0][1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rec.probabilities[0][2], 0.0);
        assert_eq!(rec.modal[0], 1);
        assert_eq!(rec.modal[1], 2);
        for probs in &rec.probabilities {
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!((rec.agreement_with(&[1, 2]).unwrap() - 1.0).abs() < 1e-12);
        assert!((rec.agreement_with(&[1, 1]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recovery_ties_break_to_smallest_index() {
        let draws_x = [vec![2], vec![1], vec![1], vec![2]];
        let states: Vec<ParamState> = draws_x
            .iter()
            .map(|x| state(&[0.0, 0.0], x.clone(), vec![0.0]))
            .collect();
        let chain = chain_from_states(states);
        let rec = recover_categories(&chain).unwrap();
        assert!((rec.probabilities[0][0] - 0.5).abs() < 1e-12);
        assert_eq!(rec.modal[0], 1);
    }
}
