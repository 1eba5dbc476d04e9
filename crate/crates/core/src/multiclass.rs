//! Multiclass calibration: temperature, vector and matrix scaling, and the
//! one-vs-all extension of the binary binning methods.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary::{
    apply_binary, default_bbq_candidates, fit_bbq, fit_histogram, fit_isotonic, BinaryModel,
    BinningMode,
};
use crate::dataset::{argmax, log_sum_exp, softmax_into, to_one_vs_all, LogitDataset, ProbVector};
use crate::error::{CalibError, Result};
use crate::optimize::{minimize_grad, minimize_scalar, GradMinResult};

/// Temperature search interval.
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 50.0);
/// Absolute tolerance on the fitted temperature.
pub const TEMPERATURE_TOL: f64 = 1e-6;

pub const AFFINE_GRAD_TOL: f64 = 1e-7;
pub const AFFINE_MAX_ITERS: usize = 50_000;

/// A calibrated prediction: class, its confidence, and (when available) the
/// whole calibrated distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedOutput {
    pub label: usize,
    pub confidence: f64,
    pub full_distribution: Option<ProbVector>,
}

impl CalibratedOutput {
    fn from_distribution(probs: Vec<f64>) -> Result<Self> {
        let (label, confidence) = argmax(&probs);
        Ok(Self {
            label,
            confidence,
            full_distribution: Some(ProbVector::new(probs)?),
        })
    }
}

fn check_finite(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(CalibError::NonFiniteInput);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub temperature: f64,
}

impl TemperatureModel {
    pub fn new(temperature: f64) -> Result<Self> {
        if temperature.is_finite() && temperature > 0.0 {
            Ok(Self { temperature })
        } else {
            Err(CalibError::InvalidModel(format!(
                "temperature must be finite and positive, got {temperature}"
            )))
        }
    }
}

/// Total NLL of `softmax(z / T)` over the dataset.
pub fn temperature_nll(d: &LogitDataset, temperature: f64) -> f64 {
    let inv = 1.0 / temperature;
    let mut scaled = vec![0.0; d.k()];
    d.rows()
        .zip(d.labels())
        .map(|(z, &y)| {
            for (s, &v) in scaled.iter_mut().zip(z) {
                *s = v * inv;
            }
            log_sum_exp(&scaled) - scaled[y]
        })
        .sum()
}

/// The NLL-minimizing temperature on `d`, searched over [`TEMPERATURE_RANGE`].
///
/// An optimum on the edge of the interval is reported as
/// [`CalibError::BoundaryOptimum`] instead of being returned.
pub fn fit_temperature(d: &LogitDataset) -> Result<TemperatureModel> {
    let (lo, hi) = TEMPERATURE_RANGE;
    let n = d.n() as f64;
    let r = minimize_scalar(|t| temperature_nll(d, t) / n, lo, hi, TEMPERATURE_TOL)?;
    if r.at_boundary {
        return Err(CalibError::BoundaryOptimum {
            temperature: r.argmin,
            lo,
            hi,
        });
    }
    TemperatureModel::new(r.argmin)
}

/// Calibrated distribution `softmax(z / T)`; the label stays `argmax z`.
pub fn apply_temperature(m: &TemperatureModel, z: &[f64]) -> Result<CalibratedOutput> {
    check_finite(z)?;
    let scaled: Vec<f64> = z.iter().map(|v| v / m.temperature).collect();
    let mut probs = vec![0.0; z.len()];
    softmax_into(&scaled, &mut probs);
    let (label, _) = argmax(z);
    Ok(CalibratedOutput {
        label,
        confidence: probs[label],
        full_distribution: Some(ProbVector::new(probs)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffineKind {
    Matrix,
    Vector,
}

/// `softmax(W z + b)`; for the vector kind W is diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScalingModel {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub kind: AffineKind,
}

impl AffineScalingModel {
    pub fn identity(k: usize, kind: AffineKind) -> Self {
        let weight = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            weight,
            bias: vec![0.0; k],
            kind,
        }
    }

    pub fn k(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.bias.len();
        if k < 2 {
            return Err(CalibError::UnfittedModel);
        }
        if self.weight.len() != k || self.weight.iter().any(|r| r.len() != k) {
            return Err(CalibError::InvalidModel(format!("weight must be {k}x{k}")));
        }
        if self.weight.iter().flatten().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(CalibError::InvalidModel("parameters must be finite".into()));
        }
        if self.kind == AffineKind::Vector {
            let off_diagonal = self
                .weight
                .iter()
                .enumerate()
                .any(|(i, r)| r.iter().enumerate().any(|(j, &v)| i != j && v != 0.0));
            if off_diagonal {
                return Err(CalibError::InvalidModel(
                    "vector scaling weight must be diagonal".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.k()).map(|i| self.weight[i][i]).collect()
    }

    fn transform(&self, z: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out.iter_mut().zip(&self.weight).zip(&self.bias) {
            *o = row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + b;
        }
    }

    /// Packs parameters as `[W row-major | b]` (matrix) or `[diag W | b]` (vector).
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = match self.kind {
            AffineKind::Matrix => self.weight.iter().flatten().copied().collect(),
            AffineKind::Vector => self.diagonal(),
        };
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn from_params(params: &[f64], k: usize, kind: AffineKind) -> Self {
        let (w, b) = params.split_at(params.len() - k);
        let weight = match kind {
            AffineKind::Matrix => w.chunks_exact(k).map(<[f64]>::to_vec).collect(),
            AffineKind::Vector => (0..k)
                .map(|i| (0..k).map(|j| if i == j { w[i] } else { 0.0 }).collect())
                .collect(),
        };
        Self {
            weight,
            bias: b.to_vec(),
            kind,
        }
    }
}

pub fn param_count(k: usize, kind: AffineKind) -> usize {
    match kind {
        AffineKind::Matrix => k * k + k,
        AffineKind::Vector => 2 * k,
    }
}

/// Mean NLL of `softmax(W z_i + b)` and its analytic gradient with respect
/// to the packed parameters (see [`AffineScalingModel::to_params`]).
///
/// The gradient of the cross-entropy with respect to the transformed logits
/// `u_i` is `softmax(u_i) − onehot(y_i)`, chain-ruled into W and b.
pub fn affine_nll_and_grad(d: &LogitDataset, kind: AffineKind, params: &[f64]) -> (f64, Vec<f64>) {
    let k = d.k();
    let n = d.n() as f64;
    let model = AffineScalingModel::from_params(params, k, kind);
    let mut grad = vec![0.0; params.len()];
    let bias_offset = params.len() - k;
    let mut u = vec![0.0; k];
    let mut q = vec![0.0; k];
    let mut loss = 0.0;
    for (z, &y) in d.rows().zip(d.labels()) {
        model.transform(z, &mut u);
        loss += log_sum_exp(&u) - u[y];
        softmax_into(&u, &mut q);
        q[y] -= 1.0;
        for j in 0..k {
            let r = q[j];
            grad[bias_offset + j] += r;
            match kind {
                AffineKind::Matrix => {
                    for (g, &zl) in grad[j * k..(j + 1) * k].iter_mut().zip(z) {
                        *g += r * zl;
                    }
                }
                AffineKind::Vector => grad[j] += r * z[j],
            }
        }
    }
    for g in &mut grad {
        *g /= n;
    }
    (loss / n, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// Matrix scaling with fewer than 10·K² samples.
    Overfit { n: usize, k: usize },
}

impl std::fmt::Display for FitWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitWarning::Overfit { n, k } => write!(
                f,
                "matrix scaling on n = {n} samples with K = {k} classes (< 10·K² = {}) is likely to overfit",
                10 * k * k
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AffineFit {
    pub model: AffineScalingModel,
    pub warning: Option<FitWarning>,
    pub optimizer: GradMinResult,
}

/// Fits vector or matrix scaling by gradient descent from W = I, b = 0.
pub fn fit_affine(d: &LogitDataset, kind: AffineKind) -> Result<AffineFit> {
    let (n, k) = (d.n(), d.k());
    if n < k {
        return Err(CalibError::InsufficientData { needed: k, found: n });
    }
    let warning = (kind == AffineKind::Matrix && n < 10 * k * k).then_some(FitWarning::Overfit { n, k });
    let init = AffineScalingModel::identity(k, kind).to_params();
    let r = minimize_grad(
        |p| affine_nll_and_grad(d, kind, p),
        init,
        AFFINE_GRAD_TOL,
        AFFINE_MAX_ITERS,
    )?;
    if !r.converged {
        return Err(CalibError::NonConvergence {
            iterations: r.iterations,
            grad_max_norm: r.grad_max_norm,
        });
    }
    Ok(AffineFit {
        model: AffineScalingModel::from_params(&r.params, k, kind),
        warning,
        optimizer: r,
    })
}

pub fn apply_affine(m: &AffineScalingModel, z: &[f64]) -> Result<CalibratedOutput> {
    check_finite(z)?;
    if z.len() != m.k() {
        return Err(CalibError::DimensionMismatch {
            expected: m.k(),
            found: z.len(),
        });
    }
    let mut u = vec![0.0; z.len()];
    m.transform(z, &mut u);
    let mut probs = vec![0.0; z.len()];
    softmax_into(&u, &mut probs);
    CalibratedOutput::from_distribution(probs)
}

/// Binary method used per class by the one-vs-all extension.
#[derive(Debug, Clone, PartialEq)]
pub enum OvaMethod {
    Histogram { m_bins: usize, mode: BinningMode },
    Isotonic,
    /// `None` uses [`default_bbq_candidates`].
    Bbq { candidates: Option<Vec<usize>> },
}

impl OvaMethod {
    pub fn name(&self) -> &'static str {
        match self {
            OvaMethod::Histogram { .. } => "histogram",
            OvaMethod::Isotonic => "isotonic",
            OvaMethod::Bbq { .. } => "bbq",
        }
    }
}

/// K binary calibrators of a single method, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct OneVsAllModel {
    pub per_class: Vec<BinaryModel>,
}

impl OneVsAllModel {
    pub fn k(&self) -> usize {
        self.per_class.len()
    }

    pub fn method_name(&self) -> Option<&'static str> {
        self.per_class.first().map(BinaryModel::method_name)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.method_name() else {
            return Err(CalibError::UnfittedModel);
        };
        if self.per_class.len() < 2 {
            return Err(CalibError::InvalidModel("need a calibrator per class, K >= 2".into()));
        }
        if first == "platt" || self.per_class.iter().any(|m| m.method_name() != first) {
            return Err(CalibError::InvalidModel(
                "one-vs-all calibrators must share one binning method".into(),
            ));
        }
        for (class, m) in self.per_class.iter().enumerate() {
            m.validate().map_err(|e| CalibError::ClassFit {
                class,
                source: Box::new(e),
            })?;
        }
        Ok(())
    }
}

/// Fits one binary calibrator per class on `to_one_vs_all(d, k)`.
pub fn fit_one_vs_all(d: &LogitDataset, method: &OvaMethod) -> Result<OneVsAllModel> {
    let per_class = (0..d.k())
        .into_par_iter()
        .map(|class| {
            let fit = || -> Result<BinaryModel> {
                let s = to_one_vs_all(d, class)?;
                Ok(match method {
                    OvaMethod::Histogram { m_bins, mode } => {
                        BinaryModel::Histogram(fit_histogram(&s, *m_bins, *mode)?)
                    }
                    OvaMethod::Isotonic => BinaryModel::Isotonic(fit_isotonic(&s)?),
                    OvaMethod::Bbq { candidates } => {
                        let default;
                        let c = match candidates {
                            Some(c) => c.as_slice(),
                            None => {
                                default = default_bbq_candidates(s.len());
                                &default
                            }
                        };
                        BinaryModel::Bbq(fit_bbq(&s, c)?)
                    }
                })
            };
            fit().map_err(|e| CalibError::ClassFit {
                class,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OneVsAllModel { per_class })
}

/// Per-class calibrated probabilities renormalized to sum to one. The label
/// is the argmax of the unnormalized vector.
pub fn apply_one_vs_all(m: &OneVsAllModel, z: &[f64]) -> Result<CalibratedOutput> {
    check_finite(z)?;
    if z.len() != m.k() {
        return Err(CalibError::DimensionMismatch {
            expected: m.k(),
            found: z.len(),
        });
    }
    let mut probs = vec![0.0; z.len()];
    softmax_into(z, &mut probs);
    let q = m
        .per_class
        .iter()
        .zip(&probs)
        .map(|(model, &p)| apply_binary(model, p, None))
        .collect::<Result<Vec<f64>>>()?;
    normalize_ova(q)
}

/// Label and confidence from an unnormalized per-class vector.
pub fn normalize_ova(q: Vec<f64>) -> Result<CalibratedOutput> {
    let total: f64 = q.iter().sum();
    if !(total > 0.0) {
        return Err(CalibError::ZeroMassVector);
    }
    let (label, top) = argmax(&q);
    let mut dist: Vec<f64> = q.iter().map(|v| v / total).collect();
    // keep the stored distribution exactly consistent with the confidence
    dist[label] = top / total;
    Ok(CalibratedOutput {
        label,
        confidence: top / total,
        full_distribution: Some(ProbVector::new(dist)?),
    })
}
