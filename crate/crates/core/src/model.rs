//! A fitted calibrator of any kind, and its JSON form.
//!
//! Every model is a JSON object with a `method` discriminator:
//!
//! ```text
//! {"method":"histogram","boundaries":[…],"thetas":[…]}
//! {"method":"isotonic","breakpoints":[…],"values":[…]}
//! {"method":"bbq","schemes":[…],"log_weights":[…]}
//! {"method":"platt","a":…,"b":…}
//! {"method":"temperature","temperature":…}
//! {"method":"vector"|"matrix","weight":[[…]],"bias":[…]}
//! {"method":"ova_histogram"|"ova_isotonic"|"ova_bbq","per_class":[…]}
//! ```
//!
//! Binary methods calibrate the class-1 probability of a two-class problem.

use serde::{Deserialize, Serialize};

use crate::binary::{
    apply_binary, fit_bbq, fit_histogram, fit_isotonic, fit_platt, BbqModel, BinaryModel,
    BinningMode, HistogramBinningModel, IsotonicModel, PlattModel,
};
use crate::dataset::{to_one_vs_all, LogitDataset};
use crate::error::{CalibError, Result};
use crate::multiclass::{
    apply_affine, apply_one_vs_all, apply_temperature, fit_affine, fit_one_vs_all, fit_temperature,
    AffineKind, AffineScalingModel, CalibratedOutput, FitWarning, OneVsAllModel, OvaMethod,
    TemperatureModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Histogram,
    Isotonic,
    Bbq,
    Platt,
    Temperature,
    Vector,
    Matrix,
    OvaHistogram,
    OvaIsotonic,
    OvaBbq,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Histogram,
        Method::Isotonic,
        Method::Bbq,
        Method::Platt,
        Method::Temperature,
        Method::Vector,
        Method::Matrix,
        Method::OvaHistogram,
        Method::OvaIsotonic,
        Method::OvaBbq,
    ];

    pub fn is_binary(self) -> bool {
        matches!(self, Method::Histogram | Method::Isotonic | Method::Bbq | Method::Platt)
    }
}

/// Knobs shared by the binning methods.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub m_bins: usize,
    pub binning: BinningMode,
    /// `None` uses the default BBQ candidate list.
    pub bbq_candidates: Option<Vec<usize>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            m_bins: crate::metrics::DEFAULT_BINS,
            binning: BinningMode::default(),
            bbq_candidates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Calibrator {
    Binary(BinaryModel),
    Temperature(TemperatureModel),
    Affine(AffineScalingModel),
    OneVsAll(OneVsAllModel),
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub calibrator: Calibrator,
    pub warnings: Vec<FitWarning>,
}

impl Calibrator {
    pub fn fit(method: Method, d: &LogitDataset, opts: &FitOptions) -> Result<Fitted> {
        let mut warnings = Vec::new();
        let calibrator = match method {
            m if m.is_binary() => {
                if d.k() != 2 {
                    return Err(CalibError::DimensionMismatch {
                        expected: 2,
                        found: d.k(),
                    });
                }
                let s = to_one_vs_all(d, 1)?;
                Calibrator::Binary(match m {
                    Method::Histogram => BinaryModel::Histogram(fit_histogram(&s, opts.m_bins, opts.binning)?),
                    Method::Isotonic => BinaryModel::Isotonic(fit_isotonic(&s)?),
                    Method::Bbq => {
                        let c = opts
                            .bbq_candidates
                            .clone()
                            .unwrap_or_else(|| crate::binary::default_bbq_candidates(s.len()));
                        BinaryModel::Bbq(fit_bbq(&s, &c)?)
                    }
                    _ => {
                        let margins: Vec<f64> = d.rows().map(|z| z[1] - z[0]).collect();
                        BinaryModel::Platt(fit_platt(&s, Some(&margins))?)
                    }
                })
            }
            Method::Temperature => Calibrator::Temperature(fit_temperature(d)?),
            Method::Vector | Method::Matrix => {
                let kind = if method == Method::Vector {
                    AffineKind::Vector
                } else {
                    AffineKind::Matrix
                };
                let fit = fit_affine(d, kind)?;
                warnings.extend(fit.warning);
                Calibrator::Affine(fit.model)
            }
            Method::OvaHistogram | Method::OvaIsotonic | Method::OvaBbq => {
                let ova = match method {
                    Method::OvaHistogram => OvaMethod::Histogram {
                        m_bins: opts.m_bins,
                        mode: opts.binning,
                    },
                    Method::OvaIsotonic => OvaMethod::Isotonic,
                    _ => OvaMethod::Bbq {
                        candidates: opts.bbq_candidates.clone(),
                    },
                };
                Calibrator::OneVsAll(fit_one_vs_all(d, &ova)?)
            }
            _ => unreachable!("binary methods handled above"),
        };
        Ok(Fitted {
            calibrator,
            warnings,
        })
    }

    /// Class count the model was fitted for; `None` when it works for any K.
    pub fn num_classes(&self) -> Option<usize> {
        match self {
            Calibrator::Binary(_) => Some(2),
            Calibrator::Temperature(_) => None,
            Calibrator::Affine(m) => Some(m.k()),
            Calibrator::OneVsAll(m) => Some(m.k()),
        }
    }

    pub fn method_name(&self) -> String {
        match self {
            Calibrator::Binary(m) => m.method_name().to_owned(),
            Calibrator::Temperature(_) => "temperature".to_owned(),
            Calibrator::Affine(m) => match m.kind {
                AffineKind::Vector => "vector".to_owned(),
                AffineKind::Matrix => "matrix".to_owned(),
            },
            Calibrator::OneVsAll(m) => format!("ova_{}", m.method_name().unwrap_or("unknown")),
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<CalibratedOutput> {
        if let Some(k) = self.num_classes() {
            if z.len() != k {
                return Err(CalibError::DimensionMismatch {
                    expected: k,
                    found: z.len(),
                });
            }
        }
        match self {
            Calibrator::Binary(m) => {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(CalibError::NonFiniteInput);
                }
                let margin = z[1] - z[0];
                let p1 = crate::binary::sigmoid(margin);
                let q1 = apply_binary(m, p1, Some(margin))?;
                let probs = vec![1.0 - q1, q1];
                let label = usize::from(q1 > 0.5);
                Ok(CalibratedOutput {
                    label,
                    confidence: probs[label],
                    full_distribution: Some(crate::dataset::ProbVector::new(probs)?),
                })
            }
            Calibrator::Temperature(m) => apply_temperature(m, z),
            Calibrator::Affine(m) => apply_affine(m, z),
            Calibrator::OneVsAll(m) => apply_one_vs_all(m, z),
        }
    }

    pub fn apply_dataset(&self, d: &LogitDataset) -> Result<Vec<CalibratedOutput>> {
        d.rows().map(|z| self.apply(z)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Calibrator::Binary(m) => m.validate(),
            Calibrator::Temperature(m) => TemperatureModel::new(m.temperature).map(|_| ()),
            Calibrator::Affine(m) => m.validate(),
            Calibrator::OneVsAll(m) => m.validate(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Repr::from(self.clone())).expect("models serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&Repr::from(self.clone())).expect("models serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: Repr = serde_json::from_str(s)?;
        let c = Calibrator::try_from(repr)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Serialize, Deserialize)]
struct AffineRepr {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OvaRepr {
    per_class: Vec<BinaryRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
enum BinaryRepr {
    Histogram(HistogramBinningModel),
    Isotonic(IsotonicModel),
    Bbq(BbqModel),
    Platt(PlattModel),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
enum Repr {
    Histogram(HistogramBinningModel),
    Isotonic(IsotonicModel),
    Bbq(BbqModel),
    Platt(PlattModel),
    Temperature(TemperatureModel),
    Vector(AffineRepr),
    Matrix(AffineRepr),
    OvaHistogram(OvaRepr),
    OvaIsotonic(OvaRepr),
    OvaBbq(OvaRepr),
}

impl From<BinaryModel> for BinaryRepr {
    fn from(m: BinaryModel) -> Self {
        match m {
            BinaryModel::Histogram(m) => BinaryRepr::Histogram(m),
            BinaryModel::Isotonic(m) => BinaryRepr::Isotonic(m),
            BinaryModel::Bbq(m) => BinaryRepr::Bbq(m),
            BinaryModel::Platt(m) => BinaryRepr::Platt(m),
        }
    }
}

impl From<BinaryRepr> for BinaryModel {
    fn from(r: BinaryRepr) -> Self {
        match r {
            BinaryRepr::Histogram(m) => BinaryModel::Histogram(m),
            BinaryRepr::Isotonic(m) => BinaryModel::Isotonic(m),
            BinaryRepr::Bbq(m) => BinaryModel::Bbq(m),
            BinaryRepr::Platt(m) => BinaryModel::Platt(m),
        }
    }
}

impl From<Calibrator> for Repr {
    fn from(c: Calibrator) -> Self {
        match c {
            Calibrator::Binary(m) => match BinaryRepr::from(m) {
                BinaryRepr::Histogram(m) => Repr::Histogram(m),
                BinaryRepr::Isotonic(m) => Repr::Isotonic(m),
                BinaryRepr::Bbq(m) => Repr::Bbq(m),
                BinaryRepr::Platt(m) => Repr::Platt(m),
            },
            Calibrator::Temperature(m) => Repr::Temperature(m),
            Calibrator::Affine(m) => {
                let a = AffineRepr {
                    weight: m.weight,
                    bias: m.bias,
                };
                match m.kind {
                    AffineKind::Vector => Repr::Vector(a),
                    AffineKind::Matrix => Repr::Matrix(a),
                }
            }
            Calibrator::OneVsAll(m) => {
                let method = m.method_name();
                let ova = OvaRepr {
                    per_class: m.per_class.into_iter().map(BinaryRepr::from).collect(),
                };
                match method {
                    Some("isotonic") => Repr::OvaIsotonic(ova),
                    Some("bbq") => Repr::OvaBbq(ova),
                    _ => Repr::OvaHistogram(ova),
                }
            }
        }
    }
}

impl TryFrom<Repr> for Calibrator {
    type Error = CalibError;

    fn try_from(r: Repr) -> Result<Self> {
        let ova = |o: OvaRepr, expected: &str| -> Result<Calibrator> {
            let m = OneVsAllModel {
                per_class: o.per_class.into_iter().map(BinaryModel::from).collect(),
            };
            if m.per_class.iter().any(|c| c.method_name() != expected) {
                return Err(CalibError::InvalidModel(format!(
                    "ova_{expected} holds a calibrator of another method"
                )));
            }
            Ok(Calibrator::OneVsAll(m))
        };
        let affine = |a: AffineRepr, kind| {
            Calibrator::Affine(AffineScalingModel {
                weight: a.weight,
                bias: a.bias,
                kind,
            })
        };
        Ok(match r {
            Repr::Histogram(m) => Calibrator::Binary(BinaryModel::Histogram(m)),
            Repr::Isotonic(m) => Calibrator::Binary(BinaryModel::Isotonic(m)),
            Repr::Bbq(m) => Calibrator::Binary(BinaryModel::Bbq(m)),
            Repr::Platt(m) => Calibrator::Binary(BinaryModel::Platt(m)),
            Repr::Temperature(m) => Calibrator::Temperature(m),
            Repr::Vector(a) => affine(a, AffineKind::Vector),
            Repr::Matrix(a) => affine(a, AffineKind::Matrix),
            Repr::OvaHistogram(o) => ova(o, "histogram")?,
            Repr::OvaIsotonic(o) => ova(o, "isotonic")?,
            Repr::OvaBbq(o) => ova(o, "bbq")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binary::{fit_bbq, BbqScheme};
    use crate::dataset::BinaryCalibrationSet;
    use proptest::prelude::*;

    #[test]
    fn json_shapes() {
        let t = Calibrator::Temperature(TemperatureModel::new(2.5).unwrap());
        assert_eq!(t.to_json(), r#"{"method":"temperature","temperature":2.5}"#);

        let v = Calibrator::Affine(AffineScalingModel::identity(2, AffineKind::Vector));
        assert_eq!(
            v.to_json(),
            r#"{"method":"vector","weight":[[1.0,0.0],[0.0,1.0]],"bias":[0.0,0.0]}"#
        );

        let p = Calibrator::Binary(BinaryModel::Platt(PlattModel { a: 0.5, b: -1.0 }));
        assert_eq!(p.to_json(), r#"{"method":"platt","a":0.5,"b":-1.0}"#);

        let h = BinaryModel::Histogram(HistogramBinningModel {
            boundaries: vec![0.0, 1.0],
            thetas: vec![0.25],
        });
        let o = Calibrator::OneVsAll(OneVsAllModel {
            per_class: vec![h.clone(), h],
        });
        assert_eq!(
            o.to_json(),
            r#"{"method":"ova_histogram","per_class":[{"method":"histogram","boundaries":[0.0,1.0],"thetas":[0.25]},{"method":"histogram","boundaries":[0.0,1.0],"thetas":[0.25]}]}"#
        );
    }

    #[test]
    fn bbq_json_round_trip() {
        let s = BinaryCalibrationSet::new(vec![0.1, 0.4, 0.45, 0.8, 0.9], vec![false, true, false, true, true]).unwrap();
        let c = Calibrator::Binary(BinaryModel::Bbq(fit_bbq(&s, &[1, 2, 3]).unwrap()));
        let json = c.to_json();
        assert!(json.starts_with(r#"{"method":"bbq","schemes":[{"#));
        assert_eq!(Calibrator::from_json(&json).unwrap(), c);
    }

    #[test]
    fn rejects_invalid_models() {
        for bad in [
            r#"{"method":"temperature","temperature":-1.0}"#,
            r#"{"method":"vector","weight":[[1.0,0.5],[0.0,1.0]],"bias":[0.0,0.0]}"#,
            r#"{"method":"isotonic","breakpoints":[0.5,0.2],"values":[0.1,0.2]}"#,
            r#"{"method":"isotonic","breakpoints":[],"values":[]}"#,
            r#"{"method":"histogram","boundaries":[0.0,0.5],"thetas":[0.5]}"#,
            r#"{"method":"ova_isotonic","per_class":[{"method":"platt","a":1.0,"b":0.0},{"method":"platt","a":1.0,"b":0.0}]}"#,
            r#"{"method":"bogus"}"#,
            r#"not json"#,
        ] {
            assert!(Calibrator::from_json(bad).is_err(), "{bad}");
        }
        let scheme = BbqScheme {
            boundaries: vec![0.0, 1.0],
            alphas: vec![1.0],
            betas: vec![1.0],
            log_marginal_likelihood: 0.0,
        };
        let unnormalized = Calibrator::Binary(BinaryModel::Bbq(BbqModel {
            schemes: vec![scheme],
            log_weights: vec![-0.5],
        }));
        assert!(Calibrator::from_json(&unnormalized.to_json()).is_err());
    }

    #[test]
    fn binary_model_on_two_class_logits() {
        let c = Calibrator::Binary(BinaryModel::Platt(PlattModel::IDENTITY));
        let out = c.apply(&[0.0, 1.0]).unwrap();
        assert_eq!(out.label, 1);
        approx::assert_abs_diff_eq!(out.confidence, crate::dataset::predict(&[0.0, 1.0]).unwrap().confidence, epsilon = 1e-12);
        assert!(matches!(c.apply(&[0.0, 1.0, 2.0]), Err(CalibError::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn json_round_trips_bit_exactly(
            t in 1e-3f64..1e3,
            w in prop::collection::vec(-1e3f64..1e3, 9),
            b in prop::collection::vec(-1e3f64..1e3, 3),
        ) {
            let models = [
                Calibrator::Temperature(TemperatureModel::new(t).unwrap()),
                Calibrator::Affine(AffineScalingModel::from_params(
                    &w.iter().chain(&b).copied().collect::<Vec<_>>(), 3, AffineKind::Matrix)),
                Calibrator::Binary(BinaryModel::Platt(PlattModel { a: w[0], b: b[0] })),
            ];
            for m in models {
                let back = Calibrator::from_json(&m.to_json()).unwrap();
                prop_assert_eq!(back, m);
            }
        }
    }
}
