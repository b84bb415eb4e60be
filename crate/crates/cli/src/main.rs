use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use effchan_cli::figures::{export_banks, report_plots, reproduce};
use effchan_cli::report::report;
use effchan_cli::{CliError, ExperimentConfig, Pipeline, Result};

#[derive(Parser)]
#[command(name = "effchan", version, about = "Efficient-channel observer experiments")]
struct Cli {
    /// Experiment config (JSON). Without it the built-in preset is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "effchan-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the test, training, background and CHO-training sets.
    Generate {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// Build CG, CG-CMD and PLS banks for every training size.
    Channels {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// Score the test set with every configured observer.
    Observers {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// AUC tables (and optionally SVG plots) from the score files.
    Report {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        #[arg(long)]
        svg: bool,
    },
    /// All four stages in order.
    Run {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        #[arg(long)]
        svg: bool,
    },
    /// Write every channel bank as per-channel images.
    Export {
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// Regenerate the data behind one figure.
    Reproduce {
        #[arg(long)]
        figure: u32,
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// Print the effective config as JSON.
    ShowConfig {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
}

fn load_config(cli: &Cli, preset: Preset) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(preset.name())?,
    };
    if let Some(seed) = cli.seed {
        c.seeds.master = seed;
    }
    c.validate()?;
    Ok(c)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: &Cli) -> Result<()> {
    let pipeline = |preset| Pipeline::new(load_config(cli, preset)?, &cli.out);
    match &cli.command {
        Command::Generate { preset } => pipeline(*preset)?.generate(),
        Command::Channels { preset } => pipeline(*preset)?.channels(),
        Command::Observers { preset } => pipeline(*preset)?.observers(),
        Command::Report { preset, svg } => {
            let mut p = pipeline(*preset)?;
            let r = report(&mut p)?;
            if *svg {
                print_paths(&report_plots(&p, &r)?);
            }
            println!("{} rows{}", r.rows.len(), if r.incomplete { " (incomplete)" } else { "" });
            Ok(())
        }
        Command::Run { preset, svg } => {
            let mut p = pipeline(*preset)?;
            p.generate()?;
            p.channels()?;
            p.observers()?;
            let r = report(&mut p)?;
            if *svg {
                print_paths(&report_plots(&p, &r)?);
            }
            Ok(())
        }
        Command::Export { format: ExportFormat::Csv, preset } => {
            print_paths(&export_banks(&pipeline(*preset)?)?);
            Ok(())
        }
        Command::Reproduce { figure, preset } => {
            print_paths(&reproduce(load_config(cli, *preset)?, &cli.out, *figure)?);
            Ok(())
        }
        Command::ShowConfig { preset } => {
            let c = load_config(cli, *preset)?;
            println!("{}", serde_json::to_string_pretty(&c).map_err(|e| CliError::Config(e.to_string()))?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
