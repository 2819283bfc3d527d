use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use photongun::cli::{self, CliError, Mode, Preset, RunConfig};

#[derive(Parser)]
#[command(name = "photongun", version, about = "Photon statistics of a pulsed single-dipole source")]
struct Args {
    #[command(subcommand)]
    mode: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Built-in sweep (sweep mode only).
    #[arg(long, value_parser = ["fig2", "fig3", "fig4"])]
    preset: Option<String>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; multi-curve presets write one file per curve.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed forms and exact propagation at one operating point.
    Analyze(Common),
    /// CSV sweep over one parameter.
    Sweep(Common),
    /// Monte Carlo estimates.
    Mc(Common),
    /// Eavesdropping figures.
    Attack(Common),
    /// Cross-checks between the computation paths.
    Validate(Common),
}

fn run(args: Args) -> Result<String, CliError> {
    let (mode, common) = match args.mode {
        Command::Analyze(c) => (Mode::Analyze, c),
        Command::Sweep(c) => (Mode::Sweep, c),
        Command::Mc(c) => (Mode::Mc, c),
        Command::Attack(c) => (Mode::Attack, c),
        Command::Validate(c) => (Mode::Validate, c),
    };
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let preset = common.preset.as_deref().map(str::parse::<Preset>).transpose()?;
    if preset.is_some() && mode != Mode::Sweep {
        return Err(CliError::Config("--preset only applies to sweep".into()));
    }
    let threads = cli::threads_from_env()?;
    let out = cli::with_threads(threads, || cli::execute(mode, &cfg, preset, common.out.as_deref()))?;
    Ok(out.stdout)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(stdout) => {
            print!("{stdout}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let CliError::ChecksFailed { stdout, .. } = &e {
                print!("{stdout}");
            }
            eprintln!("photongun: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
