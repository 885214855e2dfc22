//! `mollow`: run Mollow-triplet scenarios from a JSON config.

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mollow::integrator::ModelKind;
use mollow::model::{larmor_frequency, FieldDrive};
use mollow::sweep::AnalysisConfig;

use commands::{AnalyzeInput, PredictInput};
use config::{Scenario, SweepSpec};
use error::CliError;

#[derive(Parser)]
#[command(name = "mollow", version, about = "³He ULF Mollow-triplet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one scenario and extract its triplet.
    Simulate(RunArgs),
    /// Run an amplitude, detuning or pump-comparison sweep.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Sweep spec file; replaces the scenario's `sweep` block.
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Closed-form dressed-state frequencies, no integration.
    Predict(PredictArgs),
    /// Re-run spectral extraction on an existing observable.csv.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Full,
    Reduced,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Full => ModelKind::Full,
            ModelArg::Reduced => ModelKind::Reduced,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario's model.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Reserved. Runs are deterministic; the value is only recorded.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Scenario JSON file supplying params and drive.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Static field, nT.
    #[arg(long)]
    b_static: Option<f64>,
    /// Drive amplitude, nT.
    #[arg(long)]
    b_osc: Option<f64>,
    /// Drive frequency, Hz; the Larmor frequency when omitted.
    #[arg(long)]
    drive_freq: Option<f64>,
    /// Measured resonant splitting, Hz, to convert into a drive amplitude.
    #[arg(long)]
    splitting: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// observable.csv written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Scenario supplying analysis settings and the expected center.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Expected center, Hz; overrides the scenario.
    #[arg(long)]
    center: Option<f64>,
    /// Output directory; `analysis/` next to the input by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &RunArgs) -> Result<Scenario, CliError> {
    let mut sc = Scenario::from_path(&args.config)?;
    if let Some(out) = &args.out {
        sc.output_dir = out.clone();
    }
    if let Some(m) = args.model {
        sc.model = m.into();
    }
    Ok(sc)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn predict_input(args: &PredictArgs) -> Result<PredictInput, CliError> {
    let sc = args.config.as_deref().map(Scenario::from_path).transpose()?;
    let params = sc.as_ref().map(|s| s.params).unwrap_or_default();
    let drive = match (sc.map(|s| s.drive), args.b_static, args.b_osc) {
        (Some(mut d), b0, bm) => {
            d.b_static = b0.unwrap_or(d.b_static);
            d.b_osc = bm.unwrap_or(d.b_osc);
            d.drive_freq = args.drive_freq.unwrap_or(d.drive_freq);
            Some(d)
        }
        (None, Some(b0), Some(bm)) => Some(FieldDrive::new(
            b0,
            bm,
            args.drive_freq.unwrap_or_else(|| larmor_frequency(&params, b0)),
        )),
        (None, None, None) if args.drive_freq.is_none() => None,
        (None, ..) => {
            return Err(CliError::Validation(
                "without --config both --b-static and --b-osc are required".into(),
            ))
        }
    };
    Ok(PredictInput {
        params,
        drive,
        splitting: args.splitting,
    })
}

fn analyze_input(args: &AnalyzeArgs) -> Result<AnalyzeInput, CliError> {
    let sc = args.config.as_deref().map(Scenario::from_path).transpose()?;
    let center = match (args.center, &sc) {
        (Some(c), _) => c,
        (None, Some(s)) => s.experiment().expected_center(),
        (None, None) => return Err(CliError::Validation("analyze needs --center or --config".into())),
    };
    let out = args.out.clone().unwrap_or_else(|| {
        args.input.parent().unwrap_or(Path::new(".")).join("analysis")
    });
    Ok(AnalyzeInput {
        input: args.input.clone(),
        analysis: sc.map(|s| s.analysis).unwrap_or_else(AnalysisConfig::default),
        center,
        out,
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => print_paths(&commands::simulate(&load(&args)?, args.seed)?),
        Command::Sweep { run, sweep } => {
            let mut sc = load(&run)?;
            if let Some(path) = sweep {
                sc.sweep = Some(SweepSpec::from_path(&path)?);
            }
            sc.sweep = sc.sweep.as_ref().map(|s| s.resolved(&sc));
            print_paths(&commands::sweep(&sc, run.seed)?);
        }
        Command::Predict(args) => {
            let report = commands::predict(&predict_input(&args)?)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Analyze(args) => print_paths(&commands::analyze(&analyze_input(&args)?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mollow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
