//! Post-hoc confidence calibration for probabilistic classifiers.
//!
//! Measures miscalibration from logits and labels (ECE, MCE, NLL, reliability
//! tables) and fits calibration maps on a held-out validation set:
//! histogram binning, isotonic regression, Bayesian binning into quantiles,
//! Platt scaling, temperature scaling, vector and matrix scaling, and the
//! one-vs-all extension of the binning methods.

pub mod binary;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod multiclass;
pub mod optimize;
pub mod synth;

pub use dataset::{load_logits, predict, softmax, BinaryCalibrationSet, LogitDataset, Prediction, ProbVector};
pub use error::{CalibError, Result};
pub use metrics::{evaluate, MetricsReport, ReliabilityHistogram};
pub use model::{Calibrator, FitOptions, Method};
pub use multiclass::CalibratedOutput;
pub use synth::{gen_binary, gen_sharpened, SynthSpec};
