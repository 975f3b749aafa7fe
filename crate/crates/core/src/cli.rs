//! Command-line entry point.
//!
//! Exit codes: 0 on success, 2 on invalid flags or input, 3 when every
//! requested estimation method failed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::aline::DEFAULT_GATE_THRESHOLD;
use crate::datamodel::{
    load_manifest, load_split, pair_splits, DataError, Manifest, Metric, SplitPair,
};
use crate::probit::DEFAULT_CLAMP_EPS;
use crate::report::{
    build_report, export_scatter, write_scatter_csv, EstimateReport, Method, ReportOptions,
};
use crate::synth::{generate, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "aline",
    version,
    about = "Estimate out-of-distribution performance from ensemble prediction logs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run estimators over an ID/OOD pair of prediction logs.
    Estimate(EstimateArgs),
    /// Generate a synthetic ensemble with known OOD accuracies.
    Synth(SynthArgs),
    /// Check a manifest and its logs without estimating anything.
    Validate(ValidateArgs),
    /// Write scatter CSV for an existing report.
    Scatter(ScatterArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub id_manifest: PathBuf,
    /// May name the same two-split manifest as --id-manifest.
    #[arg(long)]
    pub ood_manifest: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "aline-s,aline-d,ac,atc,doc-feat,naive"
    )]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the metric declared by the manifests.
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long, default_value_t = DEFAULT_GATE_THRESHOLD)]
    pub gate_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_CLAMP_EPS)]
    pub clamp_eps: f64,
    /// Score estimates against OOD gold labels.
    #[arg(long)]
    pub eval: bool,
    /// Also write scatter.csv next to report.json.
    #[arg(long)]
    pub scatter: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file of `key = value` generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides one setting, e.g. `--set diversity=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScatterArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

struct Failure {
    code: i32,
    message: String,
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        input_error(e.to_string())
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::Scatter(args) => cmd_scatter(&args),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| input_error(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| input_error(format!("cannot write {}: {e}", path.display())))
}

fn load_pair(args: &EstimateArgs) -> Result<SplitPair, DataError> {
    if args.id_manifest == args.ood_manifest {
        return load_manifest(&args.id_manifest);
    }
    pair_splits(
        load_split(&args.id_manifest)?,
        load_split(&args.ood_manifest)?,
    )
}

fn check_estimate_flags(args: &EstimateArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&args.gate_threshold) {
        return Err(input_error(format!(
            "--gate-threshold must lie in [0, 1], got {}",
            args.gate_threshold
        )));
    }
    if !(args.clamp_eps > 0.0 && args.clamp_eps < 0.5) {
        return Err(input_error(format!(
            "--clamp-eps must lie in (0, 0.5), got {}",
            args.clamp_eps
        )));
    }
    if args.methods.is_empty() {
        return Err(input_error("--methods lists no methods"));
    }
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs) -> Result<i32, Failure> {
    check_estimate_flags(args)?;
    let mut pair = load_pair(args)?;
    if let Some(metric) = args.metric {
        pair = SplitPair::new(metric, pair.id_logs, pair.ood_logs)?;
    }
    let options = ReportOptions {
        gate_threshold: args.gate_threshold,
        clamp_eps: args.clamp_eps,
        evaluation_mode: args.eval,
    };
    let report =
        build_report(&pair, &args.methods, &options).map_err(|e| input_error(e.to_string()))?;

    write_file(&args.out.join("report.json"), report.to_json().as_bytes())?;
    if args.scatter {
        write_scatter(&report, &args.out.join("scatter.csv"))?;
    }
    for (method, message) in &report.method_errors {
        eprintln!("warning: {method}: {message}");
    }
    if report.method_errors.len() == report.metadata.methods.len() {
        eprintln!("error: every requested method failed");
        return Ok(EXIT_ESTIMATION);
    }
    Ok(EXIT_OK)
}

fn write_scatter(report: &EstimateReport, path: &Path) -> Result<(), Failure> {
    let mut buf = Vec::new();
    write_scatter_csv(&export_scatter(report), &mut buf)
        .map_err(|e| input_error(format!("cannot format scatter rows: {e}")))?;
    write_file(path, &buf)
}

fn synth_config(args: &SynthArgs) -> Result<SynthConfig, Failure> {
    let mut table = match &args.config {
        None => toml::Table::new(),
        Some(path) => {
            if !path.exists() {
                return Err(DataError::MissingFile(path.clone()).into());
            }
            let text = fs::read_to_string(path)
                .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| input_error(format!("{}: {e}", path.display())))?
        }
    };
    for item in &args.overrides {
        let parsed: toml::Table = item
            .parse()
            .map_err(|e| input_error(format!("--set {item}: {e}")))?;
        table.extend(parsed);
    }
    SynthConfig::from_table(table, args.seed).map_err(|e| input_error(e.to_string()))
}

fn cmd_synth(args: &SynthArgs) -> Result<i32, Failure> {
    let config = synth_config(args)?;
    let ensemble = generate(&config).map_err(|e| input_error(e.to_string()))?;
    ensemble
        .write_to_dir(&args.out)
        .map_err(|e| input_error(e.to_string()))?;
    println!(
        "wrote {} models x 2 splits to {}",
        config.n_models,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_validate(args: &ValidateArgs) -> Result<i32, Failure> {
    let manifest = Manifest::read(&args.manifest)?;
    match manifest.split_ids().len() {
        1 => {
            let split = load_split(&args.manifest)?;
            println!(
                "ok: {} models on split `{}`",
                split.logs.len(),
                split.split_id
            );
        }
        2 => {
            let pair = load_manifest(&args.manifest)?;
            println!(
                "ok: {} models on splits `{}` and `{}`",
                pair.n_models(),
                pair.id_split(),
                pair.ood_split()
            );
        }
        n => {
            return Err(input_error(format!(
                "{} lists {n} splits, expected one or two",
                args.manifest.display()
            )))
        }
    }
    Ok(EXIT_OK)
}

fn cmd_scatter(args: &ScatterArgs) -> Result<i32, Failure> {
    if !args.report.exists() {
        return Err(DataError::MissingFile(args.report.clone()).into());
    }
    let text = fs::read_to_string(&args.report)
        .map_err(|e| input_error(format!("cannot read {}: {e}", args.report.display())))?;
    let report = EstimateReport::from_json(&text)
        .map_err(|e| input_error(format!("{}: {e}", args.report.display())))?;
    write_scatter(&report, &args.out)?;
    Ok(EXIT_OK)
}
