use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridmpc::problems::ControllerKind;
use gridmpc::Result;
use gridmpc_cli::commands;
use gridmpc_cli::config::{Preset, RunConfig};

#[derive(Parser)]
#[command(
    name = "gridmpc",
    version,
    about = "Economic MPC experiments on an islanded microgrid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded renewable/load profile (`profile.csv`).
    GenScenario(Common),
    /// Record excitation data (`dataset.csv`, `pe_report.json`). `--seed`
    /// sets the excitation seed and `--steps` the record length.
    Collect(Common),
    /// Run one closed-loop simulation.
    Run(RunArgs),
    /// Box-plot prediction errors of one or more `<name>.trace.csv` files.
    Eval(EvalArgs),
}

#[derive(Args)]
struct Common {
    /// JSON object of dotted keys, e.g. `{"mpc.l": 8}`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Baseline the config file and flags are applied to.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    controller: Option<ControllerArg>,
    /// Excitation dataset CSV, required by the data-driven controllers.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Profile CSV; replaces the seeded generator.
    #[arg(long, conflicts_with = "seed")]
    profile: Option<PathBuf>,
    /// Write every solved program and solver result as JSON.
    #[arg(long)]
    debug_dump: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(required = true)]
    traces: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Reference,
    LinearDd,
    HammersteinDd,
}

impl From<ControllerArg> for ControllerKind {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Reference => ControllerKind::Reference,
            ControllerArg::LinearDd => ControllerKind::LinearDd,
            ControllerArg::HammersteinDd => ControllerKind::HammersteinDd,
        }
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let base = match common.preset {
        Some(PresetArg::Paper) => Preset::Paper.config(),
        None => RunConfig::default(),
    };
    match &common.config {
        Some(path) => base.with_file(path),
        None => Ok(base),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScenario(common) => {
            let mut cfg = base_config(&common)?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.steps = common.steps.unwrap_or(cfg.steps);
            let path = commands::gen_scenario(&cfg, &common.out)?;
            println!("{}", path.display());
        }
        Command::Collect(common) => {
            let mut cfg = base_config(&common)?;
            cfg.excitation.seed = common.seed.unwrap_or(cfg.excitation.seed);
            cfg.excitation.n = common.steps.unwrap_or(cfg.excitation.n);
            print_json(&commands::collect(&cfg, &common.out)?)?;
        }
        Command::Run(args) => {
            let mut cfg = base_config(&args.common)?;
            if let Some(seed) = args.common.seed {
                cfg.seed = seed;
                cfg.profile = None;
            }
            cfg.steps = args.common.steps.unwrap_or(cfg.steps);
            if let Some(c) = args.controller {
                cfg.controller = c.into();
            }
            if args.dataset.is_some() {
                cfg.dataset = args.dataset;
            }
            if args.profile.is_some() {
                cfg.profile = args.profile;
            }
            print_json(&commands::run(&cfg, &args.common.out, args.debug_dump)?)?;
        }
        Command::Eval(args) => {
            let cfg = base_config(&args.common)?;
            print_json(&commands::eval(&cfg, &args.traces, &args.common.out)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(gridmpc_cli::exit_code(&e) as u8)
        }
    }
}
