//! The `intformer` command line: quantize, infer, eval, verify and export.
//!
//! Exit codes are 0 on success, 1 when `verify` finds a mismatch and 2 on
//! usage or I/O errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::dataio::{self, load_model, read_csv, save_model, MinMaxScaler, ModelArtifact, Sample, WindowedDataset};
use crate::error::{Error, Result};
use crate::kernels::{DenominatorRange, ExpArgument, SoftmaxOptions};
use crate::model::{assemble, first_mismatch, param_count, Edge, ModelConfig, QuantizedModel};
use crate::reference::{calibrate_model, FloatModel, Oracle, RoundingFault};
use crate::synth::{self, Instance, CALIBRATION_SAMPLES};

#[derive(Debug, Parser)]
#[command(name = "intformer", version, about = "Integer-only Transformer inference for time-series forecasting")]
pub struct Cli {
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Kv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate and quantize a float model into an artifact directory.
    Quantize(QuantizeArgs),
    /// Run one window through an artifact.
    Infer(InferArgs),
    /// Windowed RMSE of an artifact over a CSV file.
    Eval(EvalArgs),
    /// Compare the integer engine with the rational oracle on random instances.
    Verify(VerifyArgs),
    /// Write hardware memory initialization files for an artifact.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with `n`, `m`, `d_model`, `bits` and optional `[softmax]`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Window length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Input features per time step.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long = "d-model")]
    pub d_model: Option<usize>,
    /// Uniform bit width (4, 6 or 8).
    #[arg(long)]
    pub bits: Option<u32>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Float weights as JSON; seeded random weights when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Calibration CSV; seeded random windows when absent.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Comma-separated feature columns (default: every column).
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Target column (default: the last column).
    #[arg(long)]
    pub target: Option<String>,
    /// Leading fraction of clean rows used to fit the scaler and calibrate.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV holding exactly `n` rows of the `m` feature columns.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    #[arg(long)]
    pub target: Option<String>,
    /// Leading fraction of clean rows skipped as training data.
    #[arg(long, default_value_t = 0.0)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Verify this artifact on random inputs instead of random models.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub trials: u64,
    /// Test hook: make the oracle floor at every requantization.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// How a successful run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Mismatch,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    n: Option<usize>,
    m: Option<usize>,
    d_model: Option<usize>,
    bits: Option<u32>,
    #[serde(default)]
    softmax: SoftmaxFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SoftmaxFile {
    exp_argument: Option<String>,
    denominator_range: Option<String>,
}

impl ConfigArgs {
    /// Flags override the file; anything still unset falls back to
    /// `n=12, m=1, d_model=16, bits=8`, with `m` taken from `default_m` first.
    pub fn resolve(&self, default_m: Option<usize>) -> Result<ModelConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let m = self.m.or(file.m).or(default_m).unwrap_or(1);
        if let Some(dm) = default_m.filter(|&dm| dm != m) {
            return Err(Error::InvalidConfig(format!("m = {m} but the data has {dm} feature columns")));
        }
        let mut softmax = SoftmaxOptions::default();
        match file.softmax.exp_argument.as_deref() {
            None | Some("scaled") => {}
            Some("raw") => softmax.exp_argument = ExpArgument::Raw,
            Some(other) => return Err(Error::InvalidConfig(format!("unknown exp_argument `{other}`"))),
        }
        match file.softmax.denominator_range.as_deref() {
            None | Some("squared_length") => {}
            Some("row_length") => softmax.denominator_range = DenominatorRange::RowLength,
            Some(other) => return Err(Error::InvalidConfig(format!("unknown denominator_range `{other}`"))),
        }
        Ok(ModelConfig::new(
            self.n.or(file.n).unwrap_or(12),
            m,
            self.d_model.or(file.d_model).unwrap_or(16),
            self.bits.or(file.bits).unwrap_or(8),
        )?
        .with_softmax(softmax))
    }
}

struct Report<'a> {
    out: &'a mut dyn Write,
    format: Format,
}

impl Report<'_> {
    fn line(&mut self, key: &str, value: impl std::fmt::Display) -> Result<()> {
        let res = match self.format {
            Format::Text => writeln!(self.out, "{key}: {value}"),
            Format::Kv => writeln!(self.out, "{key}={value}"),
        };
        res.map_err(|e| Error::io("<stdout>", e))
    }
}

fn header_columns(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    Ok(reader.headers()?.iter().map(String::from).collect())
}

/// Explicit columns, or every header column for features and the last one
/// for the target.
fn columns(path: &Path, features: &[String], target: Option<&str>) -> Result<(Vec<String>, String)> {
    let header = header_columns(path)?;
    let features = if features.is_empty() { header.clone() } else { features.to_vec() };
    let target = match target {
        Some(t) => t.to_string(),
        None => header.last().cloned().ok_or_else(|| Error::MissingColumn("<target>".into()))?,
    };
    Ok((features, target))
}

fn as_strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Status> {
    let mut report = Report { out, format: cli.format };
    match cli.command {
        Command::Quantize(args) => quantize(&args, &mut report),
        Command::Infer(args) => infer(&args, &mut report),
        Command::Eval(args) => eval(&args, &mut report),
        Command::Verify(args) => verify(&args, &mut report),
        Command::Export(args) => export(&args, &mut report),
    }
}

/// Parses the process arguments, runs, and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Mismatch) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn quantize(args: &QuantizeArgs, report: &mut Report) -> Result<Status> {
    let mut rng = synth::rng(args.seed);
    let (cfg, batch, scaler) = match &args.calib {
        Some(path) => {
            let (features, target) = columns(path, &args.features, args.target.as_deref())?;
            let cfg = args.config.resolve(Some(features.len()))?;
            let series = read_csv(path, &as_strs(&features), &target)?;
            let (train, _) = series.split_fraction(args.train_fraction);
            let mut scaler = MinMaxScaler::new();
            let train = scaler.fit_transform(&train)?;
            let windows = train.windows(cfg.n)?;
            let batch = windows.samples.into_iter().map(|s| s.input).collect::<Vec<_>>();
            (cfg, batch, Some(scaler))
        }
        None => {
            let cfg = args.config.resolve(None)?;
            let batch = (0..CALIBRATION_SAMPLES)
                .map(|_| synth::random_window(&cfg, &mut rng))
                .collect();
            (cfg, batch, None)
        }
    };
    let float = match &args.weights {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            FloatModel::from_json(&text)?
        }
        None => synth::random_float_model(&cfg, &mut rng),
    };
    let calibration = calibrate_model(&float, &batch)?;
    let model = assemble(&cfg, &float, &calibration)?;
    save_model(&args.out, &model, scaler.as_ref())?;

    report.line("config", cfg)?;
    report.line("params", param_count(&cfg).total)?;
    report.line("calibration_windows", batch.len())?;
    for edge in Edge::ALL {
        report.line(&format!("edge.{edge}"), model.edge(edge))?;
    }
    report.line("artifact", args.out.display())?;
    Ok(Status::Ok)
}

fn infer(args: &InferArgs, report: &mut Report) -> Result<Status> {
    let ModelArtifact { model, scaler } = load_model(&args.model)?;
    let cfg = model.config;
    let header = header_columns(&args.input)?;
    let features = if args.features.is_empty() { header.clone() } else { args.features.clone() };
    // Every window row is clean, so the target column choice does not matter.
    let series = read_csv(&args.input, &as_strs(&features), &features[0])?;
    if series.len() != cfg.n || series.m() != cfg.m || series.segments.len() != 1 {
        return Err(Error::ShapeMismatch {
            expected: format!("{} clean rows x {} features", cfg.n, cfg.m),
            actual: format!("{} rows x {} features", series.len(), series.m()),
        });
    }
    let mut window = Vec::with_capacity(cfg.n * cfg.m);
    for row in &series.features {
        match &scaler {
            Some(s) => window.extend(s.transform_features(row)?),
            None => window.extend_from_slice(row),
        }
    }
    let pred = model.forward(&model.quantize_input(&window)?)?;
    let forecast = match &scaler {
        Some(s) => s.inverse_target(pred.value)?,
        None => pred.value,
    };
    report.line("prediction_q", pred.q)?;
    report.line("prediction", pred.value)?;
    report.line("forecast", forecast)?;
    Ok(Status::Ok)
}

/// Result of running a predictor over every window of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    pub rmse: f64,
}

/// Predicts every window and scores against the targets in original units.
/// `dataset` holds normalized values; `predict` returns a normalized forecast.
pub fn evaluate(
    dataset: &WindowedDataset,
    scaler: Option<&MinMaxScaler>,
    mut predict: impl FnMut(&Sample) -> Result<f64>,
) -> Result<EvalReport> {
    let unscale = |v: f64| scaler.map_or(Ok(v), |s| s.inverse_target(v));
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut targets = Vec::with_capacity(dataset.len());
    for sample in &dataset.samples {
        predictions.push(unscale(predict(sample)?)?);
        targets.push(unscale(sample.target)?);
    }
    let rmse = dataio::rmse(&predictions, &targets)?;
    Ok(EvalReport {
        predictions,
        targets,
        rmse,
    })
}

/// The integer engine as an [`evaluate`] predictor.
pub fn engine_predictor(model: &QuantizedModel) -> impl FnMut(&Sample) -> Result<f64> + '_ {
    move |s| Ok(model.forward(&model.quantize_input(&s.input)?)?.value)
}

fn eval(args: &EvalArgs, report: &mut Report) -> Result<Status> {
    let ModelArtifact { model, scaler } = load_model(&args.model)?;
    let (features, target) = columns(&args.data, &args.features, args.target.as_deref())?;
    let series = read_csv(&args.data, &as_strs(&features), &target)?;
    let (_, test) = series.split_fraction(args.train_fraction);
    let test = match &scaler {
        Some(s) => s.transform(&test)?,
        None => test,
    };
    let dataset = test.windows(model.config.n)?;
    if dataset.m != model.config.m {
        return Err(Error::ShapeMismatch {
            expected: format!("{} features", model.config.m),
            actual: format!("{} features", dataset.m),
        });
    }
    let r = evaluate(&dataset, scaler.as_ref(), engine_predictor(&model))?;
    report.line("windows", dataset.len())?;
    report.line("rmse", r.rmse)?;
    Ok(Status::Ok)
}

fn verify(args: &VerifyArgs, report: &mut Report) -> Result<Status> {
    let oracle = if args.inject_fault {
        Oracle::with_fault(RoundingFault::FloorRequant)
    } else {
        Oracle::exact()
    };
    let artifact = args.model.as_ref().map(load_model).transpose()?;
    let cfg = match &artifact {
        Some(a) => a.model.config,
        None => args.config.resolve(None)?,
    };
    report.line("config", cfg)?;
    for trial in 0..args.trials {
        let seed = args.seed.wrapping_add(trial);
        let (model, x) = match &artifact {
            Some(a) => {
                let window = synth::random_window(&cfg, &mut synth::rng(seed));
                (a.model.clone(), a.model.quantize_input(&window)?)
            }
            None => {
                let inst = Instance::generate(&cfg, seed)?;
                (inst.model, inst.input_q)
            }
        };
        let engine = model.forward_traced(&x)?;
        let expected = oracle.forward(&model, &x)?;
        if let Some(m) = first_mismatch(&expected, &engine) {
            report.line("trials", trial + 1)?;
            report.line("mismatch_seed", seed)?;
            report.line("mismatch_edge", m.edge)?;
            report.line("mismatch_index", m.index)?;
            let show = |v: Option<i64>| v.map_or("-".to_string(), |v| v.to_string());
            report.line("expected", show(m.expected))?;
            report.line("actual", show(m.actual))?;
            return Ok(Status::Mismatch);
        }
    }
    report.line("trials", args.trials)?;
    report.line("edges", Edge::ALL.len())?;
    report.line("result", if args.trials == 0 { "0 trials run" } else { "bit-exact" })?;
    Ok(Status::Ok)
}

fn export(args: &ExportArgs, report: &mut Report) -> Result<Status> {
    let ModelArtifact { model, .. } = load_model(&args.model)?;
    let infos = dataio::export_hw_mem(&model, &args.out)?;
    for info in &infos {
        report.line(&format!("memory.{}", info.name), format!("{}x{}", info.depth, info.width))?;
    }
    report.line("out", args.out.display())?;
    Ok(Status::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "n = 6\nm = 7\nd_model = 8\nbits = 4\n[softmax]\ndenominator_range = \"row_length\"\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            bits: Some(6),
            ..Default::default()
        };
        let cfg = args.resolve(None).unwrap();
        assert_eq!((cfg.n, cfg.m, cfg.d_model, cfg.bits), (6, 7, 8, 6));
        assert_eq!(cfg.softmax.denominator_range, DenominatorRange::RowLength);
        assert!(args.resolve(Some(3)).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
