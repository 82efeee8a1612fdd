use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpss_core::linear::SweepParam;

mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "gpss", version, about = "Power system stabilizer studies on multi-machine grids")]
struct Cli {
    /// Directory for results and the run manifest.
    #[arg(long, short, global = true, env = "GPSS_OUT_DIR", default_value = "gpss-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the power flow of a case.
    Powerflow(PowerflowArgs),
    /// Linearize at equilibrium and list the modes.
    Modal(ModalArgs),
    /// Track modes while sweeping one of the betas.
    Sweep(SweepArgs),
    /// Open-loop frequency response at one unit's stabilizer.
    Bode(BodeArgs),
    /// Run a time-domain scenario.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CaseArg {
    /// Case JSON file; the bundled two-area case when omitted.
    #[arg(long)]
    pub case: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub gain: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PowerflowArgs {
    #[command(flatten)]
    pub case: CaseArg,
    /// Mismatch tolerance, pu.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ModalArgs {
    #[command(flatten)]
    pub case: CaseArg,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Generators receiving the stabilizer; all when omitted, none when empty.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub units: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub case: CaseArg,
    #[arg(long, value_enum)]
    pub param: SweepParamArg,
    /// `start:step:stop`, or a single value.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    /// Value of the beta that is held fixed.
    #[arg(long, default_value_t = 0.0)]
    pub fixed: f64,
    #[arg(long, default_value_t = 25.0)]
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SweepParamArg {
    Beta1,
    Beta2,
}

impl From<SweepParamArg> for SweepParam {
    fn from(p: SweepParamArg) -> Self {
        match p {
            SweepParamArg::Beta1 => SweepParam::Beta1,
            SweepParamArg::Beta2 => SweepParam::Beta2,
        }
    }
}

#[derive(Debug, Args)]
pub struct BodeArgs {
    #[command(flatten)]
    pub case: CaseArg,
    /// Generator whose stabilizer loop is opened.
    #[arg(long)]
    pub unit: usize,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Measurement delay, s: one value for every sensor or one per sensor.
    #[arg(long, value_delimiter = ',')]
    pub delay: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.01)]
    pub fmin: f64,
    #[arg(long, default_value_t = 10.0)]
    pub fmax: f64,
    #[arg(long, default_value_t = 400)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON; a G3 trip at 1 s over 21 s when omitted.
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub case: CaseArg,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Relative speed columns such as `omega2-omega4`.
    #[arg(long)]
    pub record: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Mean measurement delay, s; switches to emulated channels.
    #[arg(long)]
    pub delay: Option<f64>,
    /// Delay jitter standard deviation, s.
    #[arg(long, default_value_t = 0.0, requires = "delay")]
    pub jitter: f64,
    /// Packet drop probability.
    #[arg(long, default_value_t = 0.0, requires = "delay")]
    pub drop: f64,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| anyhow::Error::new(gpss_core::Error::Io(e)))?;
    let manifest = match &cli.command {
        Command::Powerflow(a) => commands::powerflow(a, out)?,
        Command::Modal(a) => commands::modal(a, out)?,
        Command::Sweep(a) => commands::sweep(a, out)?,
        Command::Bode(a) => commands::bode(a, out)?,
        Command::Simulate(a) => commands::simulate(a, out)?,
    };
    finish(manifest, out)
}

fn finish(manifest: manifest::RunManifest, out: &Path) -> anyhow::Result<()> {
    let path = manifest.finish(out)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// 1 for bad input, 2 when the numerics fail.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<commands::Numerical>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<gpss_core::Error>() {
            return if e.is_input_error() { 1 } else { 2 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
