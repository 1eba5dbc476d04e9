//! Calibration metrics: reliability histograms, ECE, MCE, NLL and entropy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{argmax, softmax_into, LogitDataset, ProbVector};
use crate::error::{CalibError, Result};
use crate::multiclass::CalibratedOutput;

/// Bin count used throughout when none is given.
pub const DEFAULT_BINS: usize = 15;

/// Probabilities are floored here before taking logs in [`nll`].
pub const PROB_FLOOR: f64 = 1e-12;

/// One confidence interval `(lower, upper]` of a reliability histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub accuracy: Option<f64>,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
}

impl ReliabilityBin {
    /// |acc − conf|, or `None` when the bin is empty.
    pub fn gap(&self) -> Option<f64> {
        Some((self.accuracy? - self.mean_confidence?).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityHistogram {
    bins: Vec<ReliabilityBin>,
}

impl ReliabilityHistogram {
    pub fn m_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[ReliabilityBin] {
        &self.bins
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Reliability table as CSV, one row per bin; empty bins leave
    /// accuracy and mean confidence blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lower,bin_upper,count,accuracy,mean_confidence\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b.lower,
                b.upper,
                b.count,
                opt(b.accuracy),
                opt(b.mean_confidence)
            );
        }
        out
    }
}

/// Index (0-based) of the bin `((m-1)/M, m/M]` holding `c`; 0 goes to the first bin.
pub fn bin_index(c: f64, m_bins: usize) -> usize {
    let m = m_bins as f64;
    let mut idx = ((c * m).ceil() as usize).clamp(1, m_bins);
    // c * M can round across a boundary; settle against the stored edges.
    while idx > 1 && c <= (idx - 1) as f64 / m {
        idx -= 1;
    }
    while idx < m_bins && c > idx as f64 / m {
        idx += 1;
    }
    idx - 1
}

pub fn build_histogram(
    confidences: &[f64],
    correct: &[bool],
    m_bins: usize,
) -> Result<ReliabilityHistogram> {
    if m_bins == 0 {
        return Err(CalibError::ZeroBins);
    }
    if confidences.len() != correct.len() {
        return Err(CalibError::LengthMismatch {
            left: confidences.len(),
            right: correct.len(),
        });
    }
    if confidences.is_empty() {
        return Err(CalibError::EmptyInput);
    }

    let mut counts = vec![0usize; m_bins];
    let mut hits = vec![0usize; m_bins];
    let mut conf_sums = vec![0.0; m_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(CalibError::InvalidProbability(c));
        }
        let b = bin_index(c, m_bins);
        counts[b] += 1;
        hits[b] += ok as usize;
        conf_sums[b] += c;
    }

    let m = m_bins as f64;
    let bins = (0..m_bins)
        .map(|b| {
            let count = counts[b];
            let (accuracy, mean_confidence) = if count == 0 {
                (None, None)
            } else {
                (
                    Some(hits[b] as f64 / count as f64),
                    Some(conf_sums[b] / count as f64),
                )
            };
            ReliabilityBin {
                lower: b as f64 / m,
                upper: (b + 1) as f64 / m,
                count,
                accuracy,
                mean_confidence,
            }
        })
        .collect();
    Ok(ReliabilityHistogram { bins })
}

/// Expected calibration error: count-weighted mean of per-bin gaps.
pub fn ece(h: &ReliabilityHistogram, n: usize) -> Result<f64> {
    let total = h.total();
    if total != n {
        return Err(CalibError::CountMismatch {
            histogram: total,
            n,
        });
    }
    Ok(h
        .bins
        .iter()
        .filter_map(|b| b.gap().map(|g| b.count as f64 / n as f64 * g))
        .sum())
}

/// Maximum calibration error over nonempty bins.
pub fn mce(h: &ReliabilityHistogram) -> Result<f64> {
    h.bins
        .iter()
        .filter_map(ReliabilityBin::gap)
        .reduce(f64::max)
        .ok_or(CalibError::AllBinsEmpty)
}

/// Total negative log likelihood (nats) of the true labels.
pub fn nll(probs: &[ProbVector], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(CalibError::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    probs.iter().zip(labels).try_fold(0.0, |acc, (p, &y)| {
        if y >= p.len() {
            return Err(CalibError::LabelOutOfRange {
                label: y,
                classes: p.len(),
            });
        }
        Ok(acc - p[y].max(PROB_FLOOR).ln())
    })
}

pub(crate) fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum()
}

/// Average Shannon entropy (nats) of the predictive distributions.
pub fn mean_entropy(probs: &[ProbVector]) -> Result<f64> {
    if probs.is_empty() {
        return Err(CalibError::EmptyInput);
    }
    Ok(probs.iter().map(|p| entropy(p.as_slice())).sum::<f64>() / probs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ece: f64,
    pub mce: f64,
    /// Total over samples, not the mean.
    pub nll: f64,
    pub error_rate: f64,
    pub mean_entropy: f64,
    pub m_bins: usize,
    #[serde(skip)]
    pub histogram: Option<ReliabilityHistogram>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Metrics of the uncalibrated softmax predictions of `d`.
pub fn evaluate(d: &LogitDataset, m_bins: usize) -> Result<MetricsReport> {
    let mut probs = vec![0.0; d.k()];
    let outputs: Vec<CalibratedOutput> = d
        .rows()
        .map(|z| -> Result<CalibratedOutput> {
            softmax_into(z, &mut probs);
            let (label, _) = argmax(z);
            Ok(CalibratedOutput {
                label,
                confidence: probs[label],
                full_distribution: Some(ProbVector::new(probs.clone())?),
            })
        })
        .collect::<Result<_>>()?;
    evaluate_outputs(&outputs, d.labels(), m_bins)
}

/// Metrics of arbitrary calibrated outputs. NLL and entropy need every output
/// to carry its full distribution; otherwise they are reported as NaN.
pub fn evaluate_outputs(
    outputs: &[CalibratedOutput],
    labels: &[usize],
    m_bins: usize,
) -> Result<MetricsReport> {
    if outputs.len() != labels.len() {
        return Err(CalibError::LengthMismatch {
            left: outputs.len(),
            right: labels.len(),
        });
    }
    let confidences: Vec<f64> = outputs.iter().map(|o| o.confidence).collect();
    let correct: Vec<bool> = outputs
        .iter()
        .zip(labels)
        .map(|(o, &y)| o.label == y)
        .collect();
    let histogram = build_histogram(&confidences, &correct, m_bins)?;
    let n = outputs.len();
    let ece = ece(&histogram, n)?;
    let mce = mce(&histogram)?;
    let error_rate = correct.iter().filter(|&&c| !c).count() as f64 / n as f64;

    let dists: Option<Vec<ProbVector>> =
        outputs.iter().map(|o| o.full_distribution.clone()).collect();
    let (nll, mean_entropy) = match dists {
        Some(d) => (nll(&d, labels)?, mean_entropy(&d)?),
        None => (f64::NAN, f64::NAN),
    };
    Ok(MetricsReport {
        ece,
        mce,
        nll,
        error_rate,
        mean_entropy,
        m_bins,
        histogram: Some(histogram),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn example() -> ReliabilityHistogram {
        build_histogram(&[0.6, 0.8, 0.9, 0.3], &[true, false, true, false], 2).unwrap()
    }

    #[test]
    fn histogram_example() {
        let h = example();
        let b = h.bins();
        assert_eq!((b[0].count, b[0].accuracy, b[0].mean_confidence), (1, Some(0.0), Some(0.3)));
        assert_eq!(b[1].count, 3);
        assert_abs_diff_eq!(b[1].accuracy.unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1].mean_confidence.unwrap(), 2.3 / 3.0, epsilon = 1e-15);
        assert_eq!((b[0].lower, b[0].upper, b[1].lower, b[1].upper), (0.0, 0.5, 0.5, 1.0));
    }

    #[test]
    fn ece_mce_example() {
        let h = example();
        assert_abs_diff_eq!(ece(&h, 4).unwrap(), 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(mce(&h).unwrap(), 0.3, epsilon = 1e-12);
        assert!(matches!(ece(&h, 5), Err(CalibError::CountMismatch { .. })));
    }

    #[test]
    fn single_bin_ece() {
        let h = build_histogram(&[0.8, 0.9], &[true, false], 1).unwrap();
        assert_abs_diff_eq!(ece(&h, 2).unwrap(), 0.35, epsilon = 1e-12);
    }

    #[test]
    fn all_confident_correct() {
        let h = build_histogram(&[1.0; 7], &[true; 7], 15).unwrap();
        assert!(h.bins()[..14].iter().all(|b| b.count == 0));
        assert_eq!(h.bins()[14].accuracy, Some(1.0));
        assert_eq!(h.bins()[14].mean_confidence, Some(1.0));
        assert_eq!(ece(&h, 7).unwrap(), 0.0);
        assert_eq!(mce(&h).unwrap(), 0.0);
    }

    #[test]
    fn histogram_errors() {
        assert!(matches!(build_histogram(&[], &[], 3), Err(CalibError::EmptyInput)));
        assert!(matches!(build_histogram(&[0.5], &[], 3), Err(CalibError::LengthMismatch { .. })));
        assert!(matches!(build_histogram(&[0.5], &[true], 0), Err(CalibError::ZeroBins)));
        assert!(matches!(
            build_histogram(&[1.5], &[true], 3),
            Err(CalibError::InvalidProbability(_))
        ));
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.3, 10), 2);
        assert_eq!(bin_index(0.30000001, 10), 3);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.5, 2), 0);
        for m in 1..40 {
            for b in 0..m {
                let upper = (b + 1) as f64 / m as f64;
                assert_eq!(bin_index(upper, m), b, "upper edge of bin {b}/{m}");
            }
        }
    }

    #[test]
    fn nll_examples() {
        let p = |v: Vec<f64>| ProbVector::new(v).unwrap();
        assert_eq!(nll(&[p(vec![1.0, 0.0])], &[0]).unwrap(), 0.0);
        let e1 = (-1f64).exp();
        assert_abs_diff_eq!(nll(&[p(vec![e1, 1.0 - e1])], &[0]).unwrap(), 1.0, epsilon = 1e-12);
        let floored = nll(&[p(vec![1.0, 0.0])], &[1]).unwrap();
        assert_abs_diff_eq!(floored, -(1e-12f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(floored, 27.63, epsilon = 1e-2);
        assert!(matches!(
            nll(&[p(vec![1.0, 0.0])], &[2]),
            Err(CalibError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn entropy_examples() {
        let p = |v: Vec<f64>| ProbVector::new(v).unwrap();
        assert_abs_diff_eq!(mean_entropy(&[p(vec![0.25; 4])]).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_eq!(mean_entropy(&[p(vec![0.0, 1.0, 0.0])]).unwrap(), 0.0);
        let avg = mean_entropy(&[p(vec![0.5, 0.5]), p(vec![1.0, 0.0])]).unwrap();
        assert_abs_diff_eq!(avg, 2f64.ln() / 2.0, epsilon = 1e-12);
        assert!(matches!(mean_entropy(&[]), Err(CalibError::EmptyInput)));
    }

    #[test]
    fn evaluate_wrong_confident() {
        let d = LogitDataset::new(vec![vec![10.0, 0.0]], vec![1]).unwrap();
        let r = evaluate(&d, DEFAULT_BINS).unwrap();
        assert_eq!(r.error_rate, 1.0);
        let h = r.histogram.as_ref().unwrap();
        assert!(h.bins()[14].mean_confidence.unwrap() > 0.9999);
        assert!(r.ece <= r.mce);
    }

    #[test]
    fn report_json_keys() {
        let d = LogitDataset::new(vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![0, 0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&evaluate(&d, 15).unwrap().to_json()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["ece", "error_rate", "m_bins", "mce", "mean_entropy", "nll"]);
    }

    #[test]
    fn csv_table_blank_for_empty_bins() {
        let h = build_histogram(&[0.9], &[true], 2).unwrap();
        assert_eq!(
            h.to_csv(),
            "bin_lower,bin_upper,count,accuracy,mean_confidence\n0,0.5,0,,\n0.5,1,1,1,0.9\n"
        );
    }

    fn rows(k: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        prop::collection::vec((prop::collection::vec(-8.0f64..8.0, k), 0..k), 1..40)
            .prop_map(|v| v.into_iter().unzip())
    }

    proptest! {
        #[test]
        fn ece_bounded_by_mce(
            samples in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200),
            m in 1usize..30,
        ) {
            let (c, ok): (Vec<f64>, Vec<bool>) = samples.into_iter().unzip();
            let h = build_histogram(&c, &ok, m).unwrap();
            let e = ece(&h, c.len()).unwrap();
            let x = mce(&h).unwrap();
            prop_assert!(0.0 <= e && e <= x + 1e-15 && x <= 1.0);
            prop_assert_eq!(h.total(), c.len());
        }

        #[test]
        fn ece_permutation_invariant(
            samples in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..100),
            seed in any::<u64>(),
        ) {
            let mut shuffled = samples.clone();
            // deterministic Fisher-Yates from a linear congruential stream
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let score = |v: &[(f64, bool)]| {
                let (c, ok): (Vec<f64>, Vec<bool>) = v.iter().copied().unzip();
                ece(&build_histogram(&c, &ok, 15).unwrap(), c.len()).unwrap()
            };
            prop_assert!((score(&samples) - score(&shuffled)).abs() <= 1e-12);
        }

        #[test]
        fn entropy_at_most_ln_k((z, y) in rows(5)) {
            let d = LogitDataset::new(z, y).unwrap();
            let r = evaluate(&d, 15).unwrap();
            prop_assert!(r.mean_entropy <= 5f64.ln() + 1e-12);
        }

        #[test]
        fn nll_additive((z1, y1) in rows(3), (z2, y2) in rows(3)) {
            let a = LogitDataset::new(z1, y1).unwrap();
            let b = LogitDataset::new(z2, y2).unwrap();
            let ab = a.concat(&b).unwrap();
            let total = evaluate(&a, 15).unwrap().nll + evaluate(&b, 15).unwrap().nll;
            let joint = evaluate(&ab, 15).unwrap().nll;
            prop_assert!((total - joint).abs() <= 1e-9 * joint.abs().max(1.0));
        }
    }
}
