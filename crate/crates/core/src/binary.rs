//! Binary calibration maps: histogram binning, isotonic regression, Bayesian
//! binning into quantiles (BBQ) and Platt scaling.
//!
//! All bins are half-open intervals `(a_m, a_{m+1}]`; a score of exactly 0
//! falls in the first bin.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::BinaryCalibrationSet;
use crate::error::{CalibError, Result};
use crate::optimize::minimize_grad;

/// Clamp applied to scores before converting them to logits.
pub const LOGIT_CLAMP: f64 = 1e-12;

const PLATT_MAX_ITERS: usize = 10_000;
const PLATT_GRAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinningMode {
    EqualWidth,
    #[default]
    EqualFrequency,
}

/// Index of the bin `(b[m], b[m+1]]` containing `s`, clamped to the outer bins.
fn locate(boundaries: &[f64], s: f64) -> usize {
    let m_bins = boundaries.len() - 1;
    // first interior boundary >= s
    let interior = &boundaries[1..m_bins];
    interior.partition_point(|&b| b < s)
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^u) without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    (p / (1.0 - p)).ln()
}

/// Bin boundaries `0 = a_1 ≤ … ≤ a_{M+1} = 1`.
pub fn bin_boundaries(scores: &[f64], m_bins: usize, mode: BinningMode) -> Result<Vec<f64>> {
    if m_bins == 0 {
        return Err(CalibError::ZeroBins);
    }
    let m = m_bins as f64;
    match mode {
        BinningMode::EqualWidth => Ok((0..=m_bins).map(|i| i as f64 / m).collect()),
        BinningMode::EqualFrequency => {
            if scores.is_empty() {
                return Err(CalibError::EmptyInput);
            }
            let mut sorted = scores.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let mut b = Vec::with_capacity(m_bins + 1);
            b.push(0.0);
            for i in 1..m_bins {
                let j = i * n / m_bins;
                let edge = match j {
                    0 => 0.0,
                    j if j >= n => 1.0,
                    j => 0.5 * (sorted[j - 1] + sorted[j]),
                };
                let prev = *b.last().unwrap();
                b.push(edge.max(prev));
            }
            b.push(1.0);
            Ok(b)
        }
    }
}

/// Per-bin (count, positives) for the given boundaries.
fn bin_counts(s: &BinaryCalibrationSet, boundaries: &[f64]) -> Vec<(usize, usize)> {
    let mut counts = vec![(0, 0); boundaries.len() - 1];
    for (&score, &y) in s.scores().iter().zip(s.outcomes()) {
        let c = &mut counts[locate(boundaries, score)];
        c.0 += 1;
        c.1 += y as usize;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBinningModel {
    pub boundaries: Vec<f64>,
    pub thetas: Vec<f64>,
}

impl HistogramBinningModel {
    pub fn apply(&self, score: f64) -> f64 {
        self.thetas[locate(&self.boundaries, score)]
    }

    fn validate(&self) -> Result<()> {
        let b = &self.boundaries;
        if self.thetas.is_empty() {
            return Err(CalibError::UnfittedModel);
        }
        if b.len() != self.thetas.len() + 1 {
            return Err(CalibError::InvalidModel(format!(
                "{} boundaries for {} bins",
                b.len(),
                self.thetas.len()
            )));
        }
        if b[0] != 0.0 || b[b.len() - 1] != 1.0 || b.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(CalibError::InvalidModel("boundaries must rise from 0 to 1".into()));
        }
        check_unit(&self.thetas)
    }
}

fn check_unit(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(&v) => Err(CalibError::InvalidProbability(v)),
        None => Ok(()),
    }
}

/// Histogram binning: each bin predicts its empirical positive rate, which is
/// the closed-form minimizer of the bin-wise squared loss. Empty bins predict
/// their interval midpoint.
pub fn fit_histogram(
    s: &BinaryCalibrationSet,
    m_bins: usize,
    mode: BinningMode,
) -> Result<HistogramBinningModel> {
    if s.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    let boundaries = bin_boundaries(s.scores(), m_bins, mode)?;
    let thetas = bin_counts(s, &boundaries)
        .iter()
        .zip(boundaries.windows(2))
        .map(|(&(n, pos), w)| {
            if n == 0 {
                0.5 * (w[0] + w[1])
            } else {
                pos as f64 / n as f64
            }
        })
        .collect();
    Ok(HistogramBinningModel { boundaries, thetas })
}

/// Weighted pool-adjacent-violators. Returns blocks as `(first, last, value)`
/// over input indices, with strictly increasing values.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<(usize, usize, f64)> {
    // (first, last, weighted mean, total weight)
    let mut blocks: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(values.len());
    for (i, (&v, &w)) in values.iter().zip(weights).enumerate() {
        let mut cur = (i, i, v, w);
        while let Some(&(first, _, pv, pw)) = blocks.last() {
            if pv < cur.2 {
                break;
            }
            blocks.pop();
            let tw = pw + cur.3;
            cur = (first, cur.1, (pv * pw + cur.2 * cur.3) / tw, tw);
        }
        blocks.push(cur);
    }
    blocks.into_iter().map(|(a, b, v, _)| (a, b, v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    /// Largest training score of each monotone piece.
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicModel {
    /// Value of the first piece whose breakpoint is at or above `score`;
    /// scores past the last breakpoint get the last value.
    pub fn apply(&self, score: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b < score);
        self.values[i.min(self.values.len() - 1)]
    }

    fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(CalibError::UnfittedModel);
        }
        if self.breakpoints.len() != self.values.len() {
            return Err(CalibError::InvalidModel("breakpoints and values differ in length".into()));
        }
        if self.breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CalibError::InvalidModel("breakpoints must increase strictly".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(CalibError::InvalidModel("values must be nondecreasing".into()));
        }
        check_unit(&self.breakpoints)?;
        check_unit(&self.values)
    }
}

/// Least-squares nondecreasing step function of the score. Samples sharing a
/// score are pooled first so the fit stays a function of the score.
pub fn fit_isotonic(s: &BinaryCalibrationSet) -> Result<IsotonicModel> {
    if s.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores()[a].total_cmp(&s.scores()[b]));

    let mut xs: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &i in &order {
        let (x, y) = (s.scores()[i], s.outcomes()[i] as u8 as f64);
        if xs.last() == Some(&x) {
            *sums.last_mut().unwrap() += y;
            *weights.last_mut().unwrap() += 1.0;
        } else {
            xs.push(x);
            sums.push(y);
            weights.push(1.0);
        }
    }
    let means: Vec<f64> = sums.iter().zip(&weights).map(|(s, w)| s / w).collect();

    let (breakpoints, values) = pava(&means, &weights)
        .into_iter()
        .map(|(_, last, v)| (xs[last], v))
        .unzip();
    Ok(IsotonicModel {
        breakpoints,
        values,
    })
}

/// Histogram binning on fixed `boundaries` with θ constrained nondecreasing.
/// Empty bins take the value of the nearest nonempty bin below (or above).
pub fn fit_monotone_histogram(
    s: &BinaryCalibrationSet,
    boundaries: &[f64],
) -> Result<HistogramBinningModel> {
    if s.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    if boundaries.len() < 2 {
        return Err(CalibError::ZeroBins);
    }
    let counts = bin_counts(s, boundaries);
    let nonempty: Vec<usize> = (0..counts.len()).filter(|&m| counts[m].0 > 0).collect();
    let means: Vec<f64> = nonempty
        .iter()
        .map(|&m| counts[m].1 as f64 / counts[m].0 as f64)
        .collect();
    let weights: Vec<f64> = nonempty.iter().map(|&m| counts[m].0 as f64).collect();

    let mut fitted = vec![f64::NAN; counts.len()];
    for (first, last, v) in pava(&means, &weights) {
        for &m in &nonempty[first..=last] {
            fitted[m] = v;
        }
    }
    let first_value = fitted.iter().copied().find(|v| !v.is_nan()).unwrap();
    let mut prev = first_value;
    for v in fitted.iter_mut() {
        if v.is_nan() {
            *v = prev;
        }
        prev = *v;
    }
    Ok(HistogramBinningModel {
        boundaries: boundaries.to_vec(),
        thetas: fitted,
    })
}

/// Beta(α0, β0) prior placed on every bin's positive rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaPrior {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbqScheme {
    pub boundaries: Vec<f64>,
    /// Posterior α per bin.
    pub alphas: Vec<f64>,
    /// Posterior β per bin.
    pub betas: Vec<f64>,
    pub log_marginal_likelihood: f64,
}

impl BbqScheme {
    fn posterior_mean(&self, score: f64) -> f64 {
        let m = locate(&self.boundaries, score);
        self.alphas[m] / (self.alphas[m] + self.betas[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbqModel {
    pub schemes: Vec<BbqScheme>,
    /// Normalized log posterior weight of each scheme.
    pub log_weights: Vec<f64>,
}

impl BbqModel {
    pub fn apply(&self, score: f64) -> f64 {
        let q: f64 = self
            .schemes
            .iter()
            .zip(&self.log_weights)
            .map(|(s, &lw)| lw.exp() * s.posterior_mean(score))
            .sum();
        q.clamp(0.0, 1.0)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(CalibError::UnfittedModel);
        }
        if self.schemes.len() != self.log_weights.len() {
            return Err(CalibError::InvalidModel("one log weight per scheme required".into()));
        }
        for s in &self.schemes {
            let bins = s.boundaries.len().saturating_sub(1);
            if bins == 0 || s.alphas.len() != bins || s.betas.len() != bins {
                return Err(CalibError::InvalidModel("scheme bins and posteriors differ".into()));
            }
            if s.alphas.iter().chain(&s.betas).any(|&v| !(v > 0.0)) {
                return Err(CalibError::InvalidModel("Beta parameters must be positive".into()));
            }
        }
        if log_sum_exp(&self.log_weights).abs() > 1e-9 {
            return Err(CalibError::InvalidModel("scheme weights must sum to 1".into()));
        }
        Ok(())
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    crate::dataset::log_sum_exp(v)
}

/// Default BBQ candidates: equal-frequency schemes with 1 to 3·⌈n^{1/3}⌉ bins.
pub fn default_bbq_candidates(n: usize) -> Vec<usize> {
    let top = 3 * ((n as f64).cbrt().ceil() as usize).max(1);
    (1..=top).collect()
}

/// log B(a, b)
fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn fit_bbq(s: &BinaryCalibrationSet, candidate_bin_counts: &[usize]) -> Result<BbqModel> {
    fit_bbq_with_prior(s, candidate_bin_counts, BetaPrior::default())
}

/// Bayesian averaging over equal-frequency binning schemes, one per candidate
/// bin count, weighted by marginal likelihood under a uniform scheme prior.
///
/// Each bin's marginal likelihood is that of its observed outcome sequence,
/// `B(α0 + k, β0 + n − k) / B(α0, β0)`.
pub fn fit_bbq_with_prior(
    s: &BinaryCalibrationSet,
    candidate_bin_counts: &[usize],
    prior: BetaPrior,
) -> Result<BbqModel> {
    if s.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    if candidate_bin_counts.is_empty() {
        return Err(CalibError::EmptyCandidateList);
    }
    if !(prior.alpha > 0.0 && prior.beta > 0.0) {
        return Err(CalibError::InvalidArgument("Beta prior parameters must be positive"));
    }
    let prior_ln_beta = ln_beta_fn(prior.alpha, prior.beta);

    let schemes = candidate_bin_counts
        .iter()
        .map(|&m| {
            let boundaries = bin_boundaries(s.scores(), m, BinningMode::EqualFrequency)?;
            let counts = bin_counts(s, &boundaries);
            let mut alphas = Vec::with_capacity(m);
            let mut betas = Vec::with_capacity(m);
            let mut log_ml = 0.0;
            for &(n, pos) in &counts {
                let a = prior.alpha + pos as f64;
                let b = prior.beta + (n - pos) as f64;
                if n > 0 {
                    log_ml += ln_beta_fn(a, b) - prior_ln_beta;
                }
                alphas.push(a);
                betas.push(b);
            }
            Ok(BbqScheme {
                boundaries,
                alphas,
                betas,
                log_marginal_likelihood: log_ml,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let lml: Vec<f64> = schemes.iter().map(|s| s.log_marginal_likelihood).collect();
    let norm = log_sum_exp(&lml);
    let log_weights = lml.iter().map(|l| l - norm).collect();
    Ok(BbqModel {
        schemes,
        log_weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattModel {
    pub a: f64,
    pub b: f64,
}

impl PlattModel {
    pub const IDENTITY: PlattModel = PlattModel { a: 1.0, b: 0.0 };

    /// σ(a·z + b) where z is `logit` if given, else the logit of `score`.
    pub fn apply(&self, score: f64, logit_value: Option<f64>) -> f64 {
        let z = logit_value.unwrap_or_else(|| logit(score));
        sigmoid(self.a * z + self.b)
    }
}

/// Mean binary NLL of σ(a z + b) and its gradient in (a, b).
pub fn platt_nll(z: &[f64], outcomes: &[bool], params: &[f64]) -> (f64, Vec<f64>) {
    let (a, b) = (params[0], params[1]);
    let n = z.len() as f64;
    let (mut f, mut ga, mut gb) = (0.0, 0.0, 0.0);
    for (&zi, &yi) in z.iter().zip(outcomes) {
        let u = a * zi + b;
        let y = yi as u8 as f64;
        f += softplus(u) - y * u;
        let r = sigmoid(u) - y;
        ga += r * zi;
        gb += r;
    }
    (f / n, vec![ga / n, gb / n])
}

/// Fits (a, b) by minimizing the binary NLL from the identity start (1, 0).
/// Without `from_logits`, the logit of each clamped score is used.
pub fn fit_platt(s: &BinaryCalibrationSet, from_logits: Option<&[f64]>) -> Result<PlattModel> {
    let z: Vec<f64> = match from_logits {
        Some(z) if z.len() != s.len() => {
            return Err(CalibError::LengthMismatch {
                left: z.len(),
                right: s.len(),
            })
        }
        Some(z) => z.to_vec(),
        None => s.scores().iter().map(|&p| logit(p)).collect(),
    };
    if z.iter().any(|v| !v.is_finite()) {
        return Err(CalibError::NonFiniteInput);
    }
    let pos = s.positives();
    if pos == 0 || pos == s.len() {
        return Err(CalibError::DegenerateLabels("outcomes contain a single class"));
    }
    let (mut min_pos, mut max_pos, mut min_neg, mut max_neg) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (&zi, &y) in z.iter().zip(s.outcomes()) {
        if y {
            min_pos = min_pos.min(zi);
            max_pos = max_pos.max(zi);
        } else {
            min_neg = min_neg.min(zi);
            max_neg = max_neg.max(zi);
        }
    }
    if max_neg < min_pos || max_pos < min_neg {
        return Err(CalibError::DegenerateLabels(
            "classes are perfectly separated by the score",
        ));
    }

    let outcomes = s.outcomes();
    let r = minimize_grad(
        |p| platt_nll(&z, outcomes, p),
        vec![1.0, 0.0],
        PLATT_GRAD_TOL,
        PLATT_MAX_ITERS,
    )?;
    if !r.converged {
        return Err(CalibError::NonConvergence {
            iterations: r.iterations,
            grad_max_norm: r.grad_max_norm,
        });
    }
    Ok(PlattModel {
        a: r.params[0],
        b: r.params[1],
    })
}

/// Any fitted binary calibrator.
#[derive(Debug, Clone, PartialEq)]
pub enum BinaryModel {
    Histogram(HistogramBinningModel),
    Isotonic(IsotonicModel),
    Bbq(BbqModel),
    Platt(PlattModel),
}

impl BinaryModel {
    pub fn method_name(&self) -> &'static str {
        match self {
            BinaryModel::Histogram(_) => "histogram",
            BinaryModel::Isotonic(_) => "isotonic",
            BinaryModel::Bbq(_) => "bbq",
            BinaryModel::Platt(_) => "platt",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BinaryModel::Histogram(m) => m.validate(),
            BinaryModel::Isotonic(m) => m.validate(),
            BinaryModel::Bbq(m) => m.validate(),
            BinaryModel::Platt(m) if m.a.is_finite() && m.b.is_finite() => Ok(()),
            BinaryModel::Platt(_) => Err(CalibError::InvalidModel("Platt parameters must be finite".into())),
        }
    }
}

/// Calibrated probability for one score. Platt uses `logit` when provided.
pub fn apply_binary(model: &BinaryModel, score: f64, logit_value: Option<f64>) -> Result<f64> {
    if !(0.0..=1.0).contains(&score) {
        return Err(CalibError::InvalidProbability(score));
    }
    let unfitted = match model {
        BinaryModel::Histogram(m) => m.thetas.is_empty() || m.boundaries.len() != m.thetas.len() + 1,
        BinaryModel::Isotonic(m) => m.values.is_empty(),
        BinaryModel::Bbq(m) => m.schemes.is_empty(),
        BinaryModel::Platt(_) => false,
    };
    if unfitted {
        return Err(CalibError::UnfittedModel);
    }
    Ok(match model {
        BinaryModel::Histogram(m) => m.apply(score),
        BinaryModel::Isotonic(m) => m.apply(score),
        BinaryModel::Bbq(m) => m.apply(score),
        BinaryModel::Platt(m) => m.apply(score, logit_value),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn set(scores: &[f64], outcomes: &[u8]) -> BinaryCalibrationSet {
        BinaryCalibrationSet::new(scores.to_vec(), outcomes.iter().map(|&o| o == 1).collect()).unwrap()
    }

    #[test]
    fn histogram_single_bin_mean() {
        let m = fit_histogram(&set(&[0.1, 0.5, 0.9], &[1, 1, 0]), 1, BinningMode::EqualWidth).unwrap();
        assert_eq!(m.thetas, vec![2.0 / 3.0]);
        assert_eq!(m.boundaries, vec![0.0, 1.0]);
    }

    #[test]
    fn histogram_all_positive() {
        let s = set(&[0.05, 0.2, 0.4, 0.45, 0.9], &[1, 1, 1, 1, 1]);
        for mode in [BinningMode::EqualWidth, BinningMode::EqualFrequency] {
            let m = fit_histogram(&s, 4, mode).unwrap();
            let counts = bin_counts(&s, &m.boundaries);
            for (theta, (n, _)) in m.thetas.iter().zip(counts) {
                if n > 0 {
                    assert_eq!(*theta, 1.0);
                }
            }
        }
    }

    #[test]
    fn histogram_equal_frequency_split() {
        let m = fit_histogram(&set(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), 2, BinningMode::EqualFrequency)
            .unwrap();
        assert!(m.boundaries[1] > 0.2 && m.boundaries[1] < 0.8);
        assert_eq!(m.thetas, vec![0.0, 1.0]);
    }

    #[test]
    fn histogram_empty_bin_midpoint_and_lookup() {
        let m = fit_histogram(&set(&[0.1, 0.15], &[0, 1]), 4, BinningMode::EqualWidth).unwrap();
        assert_eq!(m.thetas, vec![0.5, 0.375, 0.625, 0.875]);
        assert!(matches!(
            fit_histogram(&set(&[0.1], &[0]), 0, BinningMode::EqualWidth),
            Err(CalibError::ZeroBins)
        ));

        let m = HistogramBinningModel {
            boundaries: vec![0.0, 0.5, 1.0],
            thetas: vec![0.2, 0.9],
        };
        let bm = BinaryModel::Histogram(m);
        assert_eq!(apply_binary(&bm, 0.7, None).unwrap(), 0.9);
        assert_eq!(apply_binary(&bm, 0.5, None).unwrap(), 0.2);
        assert_eq!(apply_binary(&bm, 0.0, None).unwrap(), 0.2);
    }

    #[test]
    fn isotonic_examples() {
        let m = fit_isotonic(&set(&[0.2, 0.4, 0.6, 0.8], &[0, 1, 1, 0])).unwrap();
        let fitted: Vec<f64> = [0.2, 0.4, 0.6, 0.8].iter().map(|&s| m.apply(s)).collect();
        assert_abs_diff_eq!(fitted[0], 0.0);
        for v in &fitted[1..] {
            assert_abs_diff_eq!(*v, 2.0 / 3.0, epsilon = 1e-15);
        }
        let bm = BinaryModel::Isotonic(m);
        assert_abs_diff_eq!(apply_binary(&bm, 0.5, None).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(apply_binary(&bm, 0.0, None).unwrap(), 0.0);
        assert_abs_diff_eq!(apply_binary(&bm, 1.0, None).unwrap(), 2.0 / 3.0, epsilon = 1e-15);

        let m = fit_isotonic(&set(&[0.1, 0.3, 0.5, 0.7], &[0, 0, 1, 1])).unwrap();
        let fitted: Vec<f64> = [0.1, 0.3, 0.5, 0.7].iter().map(|&s| m.apply(s)).collect();
        assert_eq!(fitted, vec![0.0, 0.0, 1.0, 1.0]);

        let m = fit_isotonic(&set(&[0.9, 0.1, 0.5], &[1, 1, 1])).unwrap();
        assert_eq!(m.values, vec![1.0]);

        assert!(matches!(fit_isotonic(&set(&[], &[])), Err(CalibError::EmptyInput)));
    }

    #[test]
    fn isotonic_pools_tied_scores() {
        let m = fit_isotonic(&set(&[0.5, 0.5, 0.5, 0.2], &[1, 0, 1, 0])).unwrap();
        assert_eq!(m.breakpoints, vec![0.2, 0.5]);
        assert_abs_diff_eq!(m.values[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn monotone_histogram_reproduces_histogram_when_monotone() {
        let s = set(
            &[0.05, 0.1, 0.3, 0.35, 0.6, 0.65, 0.7, 0.9, 0.95],
            &[0, 0, 0, 1, 1, 0, 1, 1, 1],
        );
        let h = fit_histogram(&s, 3, BinningMode::EqualWidth).unwrap();
        assert!(h.thetas.windows(2).all(|w| w[0] <= w[1]));
        let iso = fit_monotone_histogram(&s, &h.boundaries).unwrap();
        assert_eq!(iso, h);

        // and pools when not monotone
        let s = set(&[0.1, 0.2, 0.6, 0.7], &[1, 1, 0, 0]);
        let iso = fit_monotone_histogram(&s, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(iso.thetas, vec![0.5, 0.5]);
    }

    #[test]
    fn bbq_examples() {
        let m = fit_bbq(&set(&[0.3, 0.7], &[1, 0]), &[1]).unwrap();
        assert_abs_diff_eq!(m.apply(0.1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.apply(0.9), 0.5, epsilon = 1e-15);

        let m = fit_bbq(&set(&[0.3, 0.7], &[1, 1]), &[1]).unwrap();
        for s in [0.0, 0.4, 1.0] {
            assert_abs_diff_eq!(m.apply(s), 0.75, epsilon = 1e-15);
        }

        let m = fit_bbq(&set(&[0.1, 0.3, 0.6, 0.9], &[0, 1, 0, 1]), &[2, 2]).unwrap();
        for w in m.weights() {
            assert_abs_diff_eq!(w, 0.5, epsilon = 1e-9);
        }

        assert!(matches!(fit_bbq(&set(&[0.5], &[1]), &[]), Err(CalibError::EmptyCandidateList)));
        assert!(matches!(fit_bbq(&set(&[], &[]), &[1]), Err(CalibError::EmptyInput)));
    }

    #[test]
    fn bbq_marginal_likelihood_matches_sequence_probability() {
        // Beta(1,1), outcomes [1,1,0] in one bin: ∫ p²(1−p) dp = 1/12
        let m = fit_bbq(&set(&[0.2, 0.5, 0.8], &[1, 1, 0]), &[1]).unwrap();
        assert_abs_diff_eq!(m.schemes[0].log_marginal_likelihood, (1.0f64 / 12.0).ln(), epsilon = 1e-12);
        assert_eq!((m.schemes[0].alphas[0], m.schemes[0].betas[0]), (3.0, 2.0));
    }

    #[test]
    fn bbq_prefers_informative_split() {
        let scores: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
        let outcomes: Vec<u8> = (0..40).map(|i| (i >= 20) as u8).collect();
        let m = fit_bbq(&set(&scores, &outcomes), &[1, 2]).unwrap();
        let w = m.weights();
        assert!(w[1] > 0.99, "{w:?}");
    }

    #[test]
    fn platt_identity_apply() {
        for p in [0.01, 0.3, 0.5, 0.77, 0.999] {
            assert_abs_diff_eq!(PlattModel::IDENTITY.apply(p, None), p, epsilon = 1e-12);
        }
    }

    #[test]
    fn platt_degenerate() {
        assert!(matches!(
            fit_platt(&set(&[0.2, 0.7], &[1, 1]), None),
            Err(CalibError::DegenerateLabels(_))
        ));
        assert!(matches!(
            fit_platt(&set(&[0.2, 0.7], &[0, 1]), None),
            Err(CalibError::DegenerateLabels(_))
        ));
    }

    #[test]
    fn platt_uninformative_scores() {
        // outcomes alternate independently of the (symmetric) scores
        let scores: Vec<f64> = (0..200).map(|i| 0.1 + 0.8 * ((i / 2) as f64) / 99.0).collect();
        let outcomes: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let s = set(&scores, &outcomes);
        let m = fit_platt(&s, None).unwrap();

        // grid-search oracle over (a, b)
        let z: Vec<f64> = scores.iter().map(|&p| logit(p)).collect();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in -100..=100 {
            for j in -100..=100 {
                let (a, b) = (i as f64 * 0.01, j as f64 * 0.01);
                let v = platt_nll(&z, s.outcomes(), &[a, b]).0;
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        assert!((m.a - best.1).abs() <= 0.01 && (m.b - best.2).abs() <= 0.01, "{m:?} vs {best:?}");
        assert!(m.a.abs() < 0.05);
        assert_abs_diff_eq!(sigmoid(m.b), 0.5, epsilon = 0.01);
    }

    #[test]
    fn unfitted_models_rejected() {
        let bm = BinaryModel::Isotonic(IsotonicModel {
            breakpoints: vec![],
            values: vec![],
        });
        assert!(matches!(apply_binary(&bm, 0.5, None), Err(CalibError::UnfittedModel)));
        assert!(matches!(bm.validate(), Err(CalibError::UnfittedModel)));
    }

    fn binary_set() -> impl Strategy<Value = BinaryCalibrationSet> {
        prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60).prop_map(|v| {
            let (s, o) = v.into_iter().unzip();
            BinaryCalibrationSet::new(s, o).unwrap()
        })
    }

    proptest! {
        #[test]
        fn isotonic_monotone_and_bounded(s in binary_set(), probes in prop::collection::vec(0.0f64..=1.0, 2..20)) {
            let m = BinaryModel::Isotonic(fit_isotonic(&s).unwrap());
            m.validate().unwrap();
            let mut probes = probes;
            probes.sort_by(f64::total_cmp);
            let out: Vec<f64> = probes.iter().map(|&p| apply_binary(&m, p, None).unwrap()).collect();
            prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn all_outputs_in_unit_interval(s in binary_set(), p in 0.0f64..=1.0) {
            let mut models = vec![
                BinaryModel::Histogram(fit_histogram(&s, 5, BinningMode::EqualFrequency).unwrap()),
                BinaryModel::Histogram(fit_histogram(&s, 5, BinningMode::EqualWidth).unwrap()),
                BinaryModel::Isotonic(fit_isotonic(&s).unwrap()),
                BinaryModel::Bbq(fit_bbq(&s, &default_bbq_candidates(s.len())).unwrap()),
            ];
            if let Ok(pm) = fit_platt(&s, None) {
                models.push(BinaryModel::Platt(pm));
            }
            for m in &models {
                m.validate().unwrap();
                let q = apply_binary(m, p, None).unwrap();
                prop_assert!((0.0..=1.0).contains(&q));
            }
        }

        #[test]
        fn bbq_weights_normalized(s in binary_set()) {
            let m = fit_bbq(&s, &default_bbq_candidates(s.len())).unwrap();
            prop_assert!(log_sum_exp(&m.log_weights).abs() <= 1e-9);
        }

        #[test]
        fn platt_never_worse_than_identity(s in binary_set()) {
            if let Ok(m) = fit_platt(&s, None) {
                let z: Vec<f64> = s.scores().iter().map(|&p| logit(p)).collect();
                let fitted = platt_nll(&z, s.outcomes(), &[m.a, m.b]).0;
                let identity = platt_nll(&z, s.outcomes(), &[1.0, 0.0]).0;
                prop_assert!(fitted <= identity);
            }
        }
    }
}
