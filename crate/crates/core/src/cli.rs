//! Command-line front end: `fit`, `apply`, `eval`, `report` and `synth`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::binary::{BinaryModel, BinningMode};
use crate::dataset::{load_logits, read_logit_matrix, LogitDataset};
use crate::error::CalibError;
use crate::metrics::{evaluate, evaluate_outputs, MetricsReport, DEFAULT_BINS};
use crate::model::{Calibrator, FitOptions, Method};
use crate::multiclass::CalibratedOutput;
use crate::synth::{gen_sharpened, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "calibkit", version, about = "Measure and fix classifier miscalibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a calibration map on validation logits and labels.
    Fit(FitArgs),
    /// Apply a fitted model to logits and write calibrated predictions.
    Apply(ApplyArgs),
    /// Print calibration metrics, before and after a model when one is given.
    Eval(EvalArgs),
    /// Write the reliability table and print per-bin confidence counts.
    Report(ReportArgs),
    /// Generate a synthetic logits/labels pair.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
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

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Histogram => Method::Histogram,
            MethodArg::Isotonic => Method::Isotonic,
            MethodArg::Bbq => Method::Bbq,
            MethodArg::Platt => Method::Platt,
            MethodArg::Temperature => Method::Temperature,
            MethodArg::Vector => Method::Vector,
            MethodArg::Matrix => Method::Matrix,
            MethodArg::OvaHistogram => Method::OvaHistogram,
            MethodArg::OvaIsotonic => Method::OvaIsotonic,
            MethodArg::OvaBbq => Method::OvaBbq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BinningArg {
    EqualFrequency,
    EqualWidth,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Validation logits CSV.
    #[arg(long)]
    pub logits: PathBuf,
    /// Validation labels CSV.
    #[arg(long)]
    pub labels: PathBuf,
    /// Where to write the model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Bin count for histogram binning.
    #[arg(long, default_value_t = DEFAULT_BINS, value_parser = positive)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = BinningArg::EqualFrequency)]
    pub binning: BinningArg,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the full calibrated distribution.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS, value_parser = positive)]
    pub bins: usize,
    /// Also write the printed JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Reliability table CSV destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Report the calibrated predictions of this model instead of the raw softmax.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS, value_parser = positive)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Logits CSV destination.
    #[arg(long)]
    pub logits: PathBuf,
    /// Labels CSV destination.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sharpening: f64,
    #[arg(long, default_value_t = 2.0)]
    pub logit_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// An error tagged with the stage that produced it.
pub struct Failure {
    pub stage: String,
    pub error: CalibError,
}

trait Stage<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T, Failure>;
}

impl<T> Stage<T> for Result<T, CalibError> {
    fn stage(self, stage: impl Into<String>) -> Result<T, Failure> {
        self.map_err(|error| Failure {
            stage: stage.into(),
            error,
        })
    }
}

fn io_failure(stage: &str, path: &Path, source: std::io::Error) -> Failure {
    Failure {
        stage: stage.to_owned(),
        error: CalibError::Io {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };

    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a, out, err),
        Command::Apply(a) => cmd_apply(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Report(a) => cmd_report(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}: {}", f.stage, f.error);
            if f.error.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    std::fs::write(path, body).map_err(|e| io_failure("writing output", path, e))
}

fn load(logits: &Path, labels: &Path, what: &str) -> Result<LogitDataset, Failure> {
    load_logits(logits, labels).stage(format!("loading {what} data"))
}

fn load_model(path: &Path) -> Result<Calibrator, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure("loading model", path, e))?;
    Calibrator::from_json(&text).stage("loading model")
}

fn calibrate(model: &Calibrator, d: &LogitDataset) -> Result<Vec<CalibratedOutput>, Failure> {
    if let Some(k) = model.num_classes() {
        if k != d.k() {
            return Err(Failure {
                stage: "applying model".into(),
                error: CalibError::DimensionMismatch {
                    expected: k,
                    found: d.k(),
                },
            });
        }
    }
    model.apply_dataset(d).stage("applying model")
}

fn fit_summary(c: &Calibrator) -> String {
    match c {
        Calibrator::Temperature(m) => format!("temperature = {}", m.temperature),
        Calibrator::Affine(m) => {
            let diag = m.diagonal();
            let mean = diag.iter().sum::<f64>() / diag.len() as f64;
            format!("K = {}, mean diagonal weight = {mean}", m.k())
        }
        Calibrator::Binary(BinaryModel::Platt(m)) => format!("a = {}, b = {}", m.a, m.b),
        Calibrator::Binary(BinaryModel::Histogram(m)) => format!("{} bins", m.thetas.len()),
        Calibrator::Binary(BinaryModel::Isotonic(m)) => format!("{} pieces", m.values.len()),
        Calibrator::Binary(BinaryModel::Bbq(m)) => format!("{} schemes", m.schemes.len()),
        Calibrator::OneVsAll(m) => format!("{} per-class calibrators", m.k()),
    }
}

pub fn cmd_fit(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let d = load(&a.logits, &a.labels, "validation")?;
    let method = Method::from(a.method);
    let opts = FitOptions {
        m_bins: a.bins,
        binning: match a.binning {
            BinningArg::EqualFrequency => BinningMode::EqualFrequency,
            BinningArg::EqualWidth => BinningMode::EqualWidth,
        },
        bbq_candidates: None,
    };
    let fitted = Calibrator::fit(method, &d, &opts).stage(format!("fitting {:?}", a.method).to_lowercase())?;
    for w in &fitted.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let c = fitted.calibrator;
    write_file(&a.out, &(c.to_json_pretty() + "\n"))?;
    let _ = writeln!(
        out,
        "fitted {} on n = {}, K = {}: {}",
        c.method_name(),
        d.n(),
        d.k(),
        fit_summary(&c)
    );
    Ok(())
}

pub fn cmd_apply(a: &ApplyArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let (logits, k) = read_logit_matrix(&a.logits).stage("loading test data")?;
    if let Some(expected) = model.num_classes() {
        if expected != k {
            return Err(Failure {
                stage: "applying model".into(),
                error: CalibError::DimensionMismatch { expected, found: k },
            });
        }
    }
    let outputs = logits
        .chunks_exact(k)
        .map(|z| model.apply(z))
        .collect::<Result<Vec<_>, _>>()
        .stage("applying model")?;

    let mut body = String::from("label,confidence");
    if a.full {
        for k in 0..k {
            let _ = write!(body, ",p{k}");
        }
    }
    body.push('\n');
    for o in &outputs {
        let _ = write!(body, "{},{}", o.label, o.confidence);
        if a.full {
            if let Some(p) = &o.full_distribution {
                for v in p.as_slice() {
                    let _ = write!(body, ",{v}");
                }
            }
        }
        body.push('\n');
    }
    write_file(&a.out, &body)?;
    let _ = writeln!(out, "wrote {} calibrated predictions to {}", outputs.len(), a.out.display());
    Ok(())
}

fn report_json(before: &MetricsReport, after: Option<&MetricsReport>) -> String {
    match after {
        None => before.to_json(),
        Some(after) => format!(r#"{{"before":{},"after":{}}}"#, before.to_json(), after.to_json()),
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let d = load(&a.logits, &a.labels, "evaluation")?;
    let before = evaluate(&d, a.bins).stage("evaluating uncalibrated predictions")?;
    let after = match &a.model {
        Some(path) => {
            let model = load_model(path)?;
            let outputs = calibrate(&model, &d)?;
            Some(evaluate_outputs(&outputs, d.labels(), a.bins).stage("evaluating calibrated predictions")?)
        }
        None => None,
    };
    let json = report_json(&before, after.as_ref());
    if let Some(path) = &a.out {
        write_file(path, &(json.clone() + "\n"))?;
    }
    let _ = writeln!(out, "{json}");
    Ok(())
}

pub fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let d = load(&a.logits, &a.labels, "evaluation")?;
    let report = match &a.model {
        Some(path) => {
            let model = load_model(path)?;
            let outputs = calibrate(&model, &d)?;
            evaluate_outputs(&outputs, d.labels(), a.bins)
        }
        None => evaluate(&d, a.bins),
    }
    .stage("building reliability table")?;
    let h = report.histogram.as_ref().expect("evaluate fills the histogram");
    write_file(&a.out, &h.to_csv())?;

    let n = d.n() as f64;
    let _ = writeln!(out, "bin_lower,bin_upper,count,fraction");
    for b in h.bins() {
        let _ = writeln!(out, "{},{},{},{}", b.lower, b.upper, b.count, b.count as f64 / n);
    }
    let _ = writeln!(out, "ece = {}, mce = {}", report.ece, report.mce);
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let spec = SynthSpec {
        n: a.n,
        k: a.classes,
        sharpening: a.sharpening,
        logit_scale: a.logit_scale,
        seed: a.seed,
    };
    let d = gen_sharpened(&spec).stage("generating data")?;
    d.save(&a.logits, &a.labels).stage("writing data")?;
    let _ = writeln!(
        out,
        "wrote n = {}, K = {} (sharpening {}, seed {})",
        d.n(),
        d.k(),
        a.sharpening,
        a.seed
    );
    Ok(())
}
