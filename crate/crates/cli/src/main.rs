use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rclab::svg::PlotKind;
use rclab::{
    cmd_analyze, cmd_esd, cmd_plot, cmd_simulate, cmd_verify, resolve_scenario, CliError, RunOptions, RunReport,
    Scenario,
};
use rclab_core::Scheme;

#[derive(Debug, Parser)]
#[command(name = "rclab", version, about = "Resource-competition simulator and ESD toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the system and write trajectory.csv
    Simulate(RunArgs),
    /// Compute the evolutionary stable distribution and write esd.csv
    Esd(RunArgs),
    /// Simulate, solve the ESD, compare, and write CSV, JSON and SVG outputs
    Verify(RunArgs),
    /// Extinction predicate and Dirac / two-peak steady states
    Analyze(RunArgs),
    /// Render a trajectory.csv as SVG
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Built-in scenario: example1, example2 or n1-closedform
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,
    /// Scenario file in key = value format
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Final time
    #[arg(long = "T")]
    t_final: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// semi or implicit
    #[arg(long)]
    scheme: Option<String>,
    /// Output directory
    #[arg(long, env = "RCLAB_OUT", default_value = "rclab-out")]
    out: PathBuf,
    /// Tolerance of the command's main check (esd: KKT residual; verify: ESD distance)
    #[arg(long)]
    tol: Option<f64>,
    /// Seed for the random restarts of `esd`
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// trajectory.csv to render
    csv: PathBuf,
    /// profile, entropy or waterfall
    #[arg(long, default_value = "profile")]
    kind: String,
    /// Logarithmic y axis (entropy plot)
    #[arg(long)]
    log: bool,
    /// Output file; defaults to <kind>.svg next to the CSV
    #[arg(long)]
    output: Option<PathBuf>,
}

type CommandFn = fn(&Scenario, &RunOptions) -> Result<RunReport, CliError>;

fn run(cli: Cli) -> Result<bool, CliError> {
    let (args, cmd): (RunArgs, CommandFn) = match cli.command {
        Command::Plot(p) => {
            let kind: PlotKind = p.kind.parse()?;
            let output = p
                .output
                .unwrap_or_else(|| p.csv.with_file_name(format!("{}.svg", p.kind)));
            cmd_plot(&p.csv, kind, p.log, &output)?;
            println!("wrote {}", output.display());
            return Ok(true);
        }
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Esd(a) => (a, cmd_esd),
        Command::Verify(a) => (a, cmd_verify),
        Command::Analyze(a) => (a, cmd_analyze),
    };
    let scenario = resolve_scenario(args.preset.as_deref(), args.scenario.as_deref())?;
    let scheme = match args.scheme.as_deref() {
        None => None,
        Some(s) => Some(Scheme::parse(s).ok_or_else(|| CliError::Usage(format!("unknown scheme {s:?}")))?),
    };
    let opts = RunOptions {
        t_final: args.t_final,
        dt: args.dt,
        scheme,
        out: args.out,
        tol: args.tol,
        seed: args.seed,
    };
    let report = cmd(&scenario, &opts)?;
    for (key, value) in report.to_flat() {
        println!("{key}: {value}");
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
