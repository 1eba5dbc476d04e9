//! Synthetic datasets with known calibration structure.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`, whose output stream is fixed across platforms and crate
//! versions. Uniforms take the top 53 bits of `next_u64`; Gaussians use the
//! Box–Muller transform, consuming both outputs of each pair in order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{softmax_into, BinaryCalibrationSet, LogitDataset};
use crate::error::{CalibError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub k: usize,
    /// Factor applied to the base logits after labels are drawn; the
    /// population NLL-optimal temperature equals this value.
    pub sharpening: f64,
    /// Standard deviation of the base logits.
    pub logit_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CalibError::InvalidArgument("n must be at least 1"));
        }
        if self.k < 2 {
            return Err(CalibError::InvalidArgument("k must be at least 2"));
        }
        if !(self.sharpening > 0.0 && self.sharpening.is_finite()) {
            return Err(CalibError::InvalidArgument("sharpening must be positive"));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(CalibError::InvalidArgument("logit_scale must be positive"));
        }
        Ok(())
    }
}

/// Seeded stream of uniforms and standard normals.
pub struct SynthRng {
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Index drawn from the distribution `probs`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Labels drawn from `softmax(z)`, logits emitted as `sharpening · z`.
///
/// With sharpening 1 the dataset is calibrated by construction; larger values
/// make the logits overconfident.
pub fn gen_sharpened(spec: &SynthSpec) -> Result<LogitDataset> {
    spec.validate()?;
    let mut rng = SynthRng::new(spec.seed);
    let mut logits = Vec::with_capacity(spec.n * spec.k);
    let mut labels = Vec::with_capacity(spec.n);
    let mut z = vec![0.0; spec.k];
    let mut p = vec![0.0; spec.k];
    for _ in 0..spec.n {
        for v in z.iter_mut() {
            *v = spec.logit_scale * rng.normal();
        }
        softmax_into(&z, &mut p);
        labels.push(rng.categorical(&p));
        logits.extend(z.iter().map(|v| spec.sharpening * v));
    }
    LogitDataset::from_flat(logits, labels, spec.k)
}

/// Uniform scores with outcome probability `clamp(score + U(−noise, noise))`.
pub fn gen_binary(n: usize, noise: f64, seed: u64) -> Result<BinaryCalibrationSet> {
    if !(0.0..=0.5).contains(&noise) {
        return Err(CalibError::InvalidArgument("noise must lie in [0, 0.5]"));
    }
    let mut rng = SynthRng::new(seed);
    let mut scores = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let s = rng.uniform();
        let jitter = noise * (2.0 * rng.uniform() - 1.0);
        let p = (s + jitter).clamp(0.0, 1.0);
        scores.push(s);
        outcomes.push(rng.uniform() < p);
    }
    BinaryCalibrationSet::new(scores, outcomes)
}
