use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rpiq_core::calibration::{Curvature, DEFAULT_BLOCK_SIZE, DEFAULT_PERCDAMP};
use rpiq_core::gptq::GridConfig;
use rpiq_core::harness::{
    generate_model, quantize_model, write_model, ActivationSpec, ComparisonReport, Distribution,
    Method, PipelineConfig, SyntheticModelSpec,
};
use rpiq_core::model_io::{load_checkpoint, save_quantized, Checkpoint, FileKind};
use rpiq_core::refine::{
    check_alpha, RefineConfig, DEFAULT_ALPHA, DEFAULT_EARLY_STOP_TOL, DEFAULT_ITERS,
};
use rpiq_core::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

/// Two-stage post-training weight quantization: Hessian-guided rounding
/// followed by residual-projected block refinement.
#[derive(Parser, Debug)]
#[command(name = "rpiq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic model and its calibration batches.
    Generate(GenerateArgs),
    /// Quantize a model with one method and write the artifact.
    Quantize(QuantizeArgs),
    /// Run both methods on the same inputs and report the differences.
    Compare(CompareArgs),
    /// Run refinement and write the per-sweep loss trace as CSV.
    ConvergenceReport(ConvergenceArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated OUTxIN layer shapes; consecutive layers must chain.
    #[arg(long, default_value = "64x64,64x64,64x64")]
    layers: String,
    /// Number of calibration batches.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Rows per calibration batch.
    #[arg(long, default_value_t = 32)]
    rows: usize,
    /// Weight distribution: gaussian(SIGMA) or uniform(A,B).
    #[arg(long, default_value = "gaussian(1)")]
    weights: String,
    /// Activation distribution: gaussian(SIGMA) or uniform(A,B).
    #[arg(long, default_value = "gaussian(1)")]
    activations: String,
    /// Shared-factor correlation between input channels, in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    correlation: f64,
    #[arg(long, default_value = "model.rpiq")]
    model: PathBuf,
    #[arg(long, default_value = "calib.rpiq")]
    calib: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum MethodArg {
    Gptq,
    Rpiq,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum CurvatureArg {
    Global,
    Instance,
}

#[derive(Args, Debug, Clone)]
struct QuantOptions {
    #[arg(long, default_value = "model.rpiq")]
    model: PathBuf,
    #[arg(long, default_value = "calib.rpiq")]
    calib: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(2..=8))]
    bits: u8,
    #[arg(long, default_value_t = 128, value_parser = positive)]
    group_size: usize,
    /// Columns per refinement block.
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE, value_parser = positive)]
    block_size: usize,
    #[arg(long, default_value_t = DEFAULT_PERCDAMP, value_parser = positive_f64)]
    percdamp: f64,
    /// Maximum refinement sweeps.
    #[arg(long, default_value_t = DEFAULT_ITERS)]
    iters: usize,
    /// Interpolation step toward the projected solution, in (0, 1].
    #[arg(long, default_value_t = DEFAULT_ALPHA, value_parser = alpha)]
    alpha: f64,
    /// Stop when a sweep lowers the loss by no more than this fraction.
    #[arg(long, default_value_t = DEFAULT_EARLY_STOP_TOL, value_parser = non_negative_f64)]
    early_stop_tol: f64,
    /// Calibrate each layer on the quantized outputs of the previous one.
    #[arg(long, value_enum, default_value = "on")]
    sequential_prop: Toggle,
    /// Quantize layers on separate threads (requires --sequential-prop off).
    #[arg(long, default_value_t = false)]
    parallel: bool,
    /// Normal matrix of the block least-squares problems.
    #[arg(long, value_enum, default_value = "instance")]
    curvature: CurvatureArg,
    /// Refit each block's grids on its least-squares solution.
    #[arg(long, default_value_t = false)]
    refit_grids: bool,
    /// Store each layer's calibration instance in the artifact.
    #[arg(long, default_value_t = false)]
    store_snapshot: bool,
    /// Key/value report path; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-layer CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    #[arg(long, value_enum, default_value = "rpiq")]
    method: MethodArg,
    #[arg(long, default_value = "quantized.rpiq")]
    out: PathBuf,
    #[command(flatten)]
    opts: QuantOptions,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Convergence trace CSV path (layer,t,gamma).
    #[arg(long)]
    trace_csv: Option<PathBuf>,
    #[command(flatten)]
    opts: QuantOptions,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[command(flatten)]
    opts: QuantOptions,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be a positive number".into())
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be a non-negative number".into())
    }
}

fn alpha(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    check_alpha(v).map_err(|e| e.to_string())?;
    Ok(v)
}

fn parse_layers(s: &str) -> Result<Vec<(usize, usize)>, Error> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|l| {
            let (o, i) = l
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Argument(format!("layer shape '{l}' is not OUTxIN")))?;
            let parse = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Argument(format!("layer shape '{l}' is not OUTxIN")))
            };
            Ok((parse(o)?, parse(i)?))
        })
        .collect()
}

fn toggle(t: Toggle) -> &'static str {
    match t {
        Toggle::On => "on",
        Toggle::Off => "off",
    }
}

impl QuantOptions {
    fn pipeline(&self, method: Method) -> Result<PipelineConfig, Error> {
        let cfg = PipelineConfig {
            method,
            grid: GridConfig {
                bits: self.bits,
                group_size: self.group_size,
            },
            percdamp: self.percdamp,
            block_size: self.block_size,
            curvature: match self.curvature {
                CurvatureArg::Global => Curvature::Global,
                CurvatureArg::Instance => Curvature::Instance,
            },
            refine: RefineConfig {
                alpha: self.alpha,
                t_max: self.iters,
                early_stop_tol: self.early_stop_tol,
                refit_grids: self.refit_grids,
            },
            sequential: matches!(self.sequential_prop, Toggle::On),
            parallel: self.parallel,
            store_snapshot: self.store_snapshot,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn echo(&self) -> Vec<(String, String)> {
        let opt = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or_else(|| "-".to_string(), |p| p.display().to_string())
        };
        vec![
            ("model".into(), self.model.display().to_string()),
            ("calib".into(), self.calib.display().to_string()),
            ("bits".into(), self.bits.to_string()),
            ("group_size".into(), self.group_size.to_string()),
            ("block_size".into(), self.block_size.to_string()),
            ("percdamp".into(), self.percdamp.to_string()),
            ("iters".into(), self.iters.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("early_stop_tol".into(), self.early_stop_tol.to_string()),
            (
                "sequential_prop".into(),
                toggle(self.sequential_prop).into(),
            ),
            ("parallel".into(), self.parallel.to_string()),
            (
                "curvature".into(),
                format!("{:?}", self.curvature).to_lowercase(),
            ),
            ("refit_grids".into(), self.refit_grids.to_string()),
            ("store_snapshot".into(), self.store_snapshot.to_string()),
            ("report".into(), opt(&self.report)),
            ("csv".into(), opt(&self.csv)),
        ]
    }

    fn load(&self) -> Result<(Checkpoint, Vec<rpiq_core::DenseMatrix>), Error> {
        let (manifest, model) = load_checkpoint(&self.model)?;
        if manifest.kind != FileKind::Checkpoint {
            return Err(Error::Argument(format!(
                "{} is not a model checkpoint",
                self.model.display()
            )));
        }
        let (manifest, calib) = load_checkpoint(&self.calib)?;
        if manifest.kind != FileKind::Calibration {
            return Err(Error::Argument(format!(
                "{} is not a calibration file",
                self.calib.display()
            )));
        }
        Ok((model, calib.layers.into_iter().map(|(_, b)| b).collect()))
    }

    fn emit(&self, report: &ComparisonReport) -> Result<(), Error> {
        match &self.report {
            Some(p) => write(p, &report.to_text())?,
            None => print!("{}", report.to_text()),
        }
        if let Some(p) = &self.csv {
            write(p, &report.to_csv())?;
        }
        Ok(())
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn with_command(
    name: &str,
    mut echo: Vec<(String, String)>,
    extra: &[(&str, String)],
) -> Vec<(String, String)> {
    let mut out = vec![("command".to_string(), name.to_string())];
    out.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    out.append(&mut echo);
    out
}

fn method_of(m: MethodArg) -> Method {
    match m {
        MethodArg::Gptq => Method::Gptq,
        MethodArg::Rpiq => Method::Rpiq,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(a) => {
            let mut spec = SyntheticModelSpec::new(parse_layers(&a.layers)?, a.seed, a.k, a.rows);
            spec.weights = a.weights.parse::<Distribution>()?;
            spec.activations = ActivationSpec {
                dist: a.activations.parse::<Distribution>()?,
                correlation: a.correlation,
                ..ActivationSpec::default()
            };
            spec.validate().map_err(|e| match e {
                Error::Spec(m) => Error::Argument(m),
                other => other,
            })?;
            let model = generate_model(&spec)?;
            write_model(&model, &a.model, &a.calib)?;
            let echo = [
                ("command", "generate".to_string()),
                ("seed", a.seed.to_string()),
                ("layers", a.layers.clone()),
                ("k", a.k.to_string()),
                ("rows", a.rows.to_string()),
                ("weights", spec.weights.to_string()),
                ("activations", spec.activations.dist.to_string()),
                ("correlation", a.correlation.to_string()),
                ("model", a.model.display().to_string()),
                ("calib", a.calib.display().to_string()),
            ];
            for (k, v) in echo {
                println!("config.{k} = {v}");
            }
            Ok(())
        }
        Command::Quantize(a) => {
            let method = method_of(a.method);
            let cfg = a.opts.pipeline(method)?;
            let (model, batches) = a.opts.load()?;
            let run = quantize_model(&model, &batches, &cfg)?;
            save_quantized(&run.artifact, &a.out)?;
            let echo = with_command(
                "quantize",
                a.opts.echo(),
                &[
                    ("method", method.as_str().into()),
                    ("out", a.out.display().to_string()),
                ],
            );
            a.opts.emit(&ComparisonReport::from_run(&run, echo))
        }
        Command::Compare(a) => {
            let rpiq_cfg = a.opts.pipeline(Method::Rpiq)?;
            let gptq_cfg = PipelineConfig {
                method: Method::Gptq,
                ..rpiq_cfg
            };
            let (model, batches) = a.opts.load()?;
            let gptq = quantize_model(&model, &batches, &gptq_cfg)?;
            let rpiq = quantize_model(&model, &batches, &rpiq_cfg)?;
            let trace = a
                .trace_csv
                .as_ref()
                .map_or_else(|| "-".into(), |p| p.display().to_string());
            let report = ComparisonReport::compare(
                &gptq,
                &rpiq,
                with_command("compare", a.opts.echo(), &[("trace_csv", trace)]),
            );
            if let Some(p) = &a.trace_csv {
                write(p, &report.trace_csv())?;
            }
            a.opts.emit(&report)
        }
        Command::ConvergenceReport(a) => {
            let cfg = a.opts.pipeline(Method::Rpiq)?;
            let (model, batches) = a.opts.load()?;
            let run = quantize_model(&model, &batches, &cfg)?;
            let report = ComparisonReport::from_run(
                &run,
                with_command("convergence-report", a.opts.echo(), &[]),
            );
            match &a.opts.csv {
                Some(p) => write(p, &report.trace_csv())?,
                None => print!("{}", report.trace_csv()),
            }
            if let Some(p) = &a.opts.report {
                write(p, &report.to_text())?;
            }
            Ok(())
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: category=usage message={}", one_line(first));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!(
                "error: category={} message={}",
                category.as_str(),
                one_line(&e.to_string())
            );
            ExitCode::from(match category {
                rpiq_core::ErrorCategory::Usage => EXIT_USAGE,
                rpiq_core::ErrorCategory::Io => EXIT_IO,
                rpiq_core::ErrorCategory::Numeric => EXIT_NUMERIC,
            })
        }
    }
}
