use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use modcool::config::{ConfigFileError, EvolveQuantity, RunConfig};
use modcool::experiments::{evolve, grid_omega_gamma, rate_spectrum, scan_detuning, OutputMode};
use modcool::export::{self, CovarianceRow, Format, MeanFieldRow, Table};
use modcool::rates::sideband_weights;

const EXIT_INVALID_CONFIG: u8 = 1;
const EXIT_ALL_UNSTABLE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Sideband cooling with a modulated mechanical frequency.
#[derive(Parser)]
#[command(name = "modcool", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time-averaged sideband weights of the modulation waveform.
    Weights(Common),
    /// Analytic rates and occupation over the scan axis.
    Rates(Common),
    /// Full runs over the scan axis.
    Scan(Common),
    /// (ω, γ₀) map with the detuning optimized per cell.
    Grid(Common),
    /// Time series at the configured detuning.
    Evolve(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, conflicts_with = "numeric_only")]
    analytic_only: bool,
    #[arg(long)]
    numeric_only: bool,
}

impl Common {
    fn mode(&self) -> OutputMode {
        if self.analytic_only {
            OutputMode::AnalyticOnly
        } else if self.numeric_only {
            OutputMode::NumericOnly
        } else {
            OutputMode::Both
        }
    }

    fn format(&self) -> Format {
        match self.format {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Serialize)]
struct Spec<'a> {
    command: &'a str,
    mode: OutputMode,
    config: &'a RunConfig,
}

enum Failure {
    Config(ConfigFileError),
    Runtime(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn emit<R: Table>(common: &Common, spec: &Spec, rows: &[R]) -> Result<(), Failure> {
    match &common.out {
        Some(path) => export::write_file(path, common.format(), spec, rows)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            export::write(common.format(), spec, rows, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

/// Returns whether anything stable was produced.
fn run(command: &Command) -> Result<bool, Failure> {
    let (name, common) = match command {
        Command::Weights(c) => ("weights", c),
        Command::Rates(c) => ("rates", c),
        Command::Scan(c) => ("scan", c),
        Command::Grid(c) => ("grid", c),
        Command::Evolve(c) => ("evolve", c),
    };
    let cfg = RunConfig::load(Path::new(&common.config)).map_err(Failure::Config)?;
    let mode = common.mode();
    let spec = Spec { command: name, mode, config: &cfg };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.jobs {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build()?;

    pool.install(|| match command {
        Command::Weights(_) => {
            let w = sideband_weights(&cfg.model.waveform, cfg.weights.into())?;
            emit(common, &spec, &export::weight_rows(&w))?;
            Ok(true)
        }
        Command::Rates(_) => {
            let w = sideband_weights(&cfg.model.waveform, cfg.weights.into())?;
            emit(common, &spec, &rate_spectrum(&cfg.model, &w, &cfg.scan))?;
            Ok(true)
        }
        Command::Scan(_) => {
            let res = scan_detuning(&cfg.scan_spec(mode))?;
            emit(common, &spec, &res.records)?;
            Ok(!mode.numeric() || res.records.iter().any(|r| r.is_stable()))
        }
        Command::Grid(_) => {
            let cells = grid_omega_gamma(&cfg.grid_spec(mode))?;
            emit(common, &spec, &cells)?;
            Ok(cells.iter().any(|c| c.is_stable()))
        }
        Command::Evolve(_) => {
            let ev = evolve(&cfg.model, cfg.red_detuning, &cfg.controls, cfg.evolve.periods, cfg.evolve.samples_per_period)?;
            match cfg.evolve.quantity {
                EvolveQuantity::MeanField => {
                    let model = cfg.model.with_detuning(-cfg.red_detuning);
                    let rows: Vec<MeanFieldRow> = ev.mean_field.iter().map(|s| MeanFieldRow::new(&model, s)).collect();
                    emit(common, &spec, &rows)?;
                    Ok(ev.mean_field_diverged_at.is_none())
                }
                EvolveQuantity::Covariance => match &ev.covariance {
                    Some(states) => {
                        let rows: Vec<CovarianceRow> = states.iter().map(CovarianceRow::from).collect();
                        emit(common, &spec, &rows)?;
                        Ok(true)
                    }
                    None => {
                        emit::<CovarianceRow>(common, &spec, &[])?;
                        Ok(false)
                    }
                },
            }
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("modcool: no stable point");
            ExitCode::from(EXIT_ALL_UNSTABLE)
        }
        Err(Failure::Config(e)) => {
            eprintln!("modcool: invalid configuration: {e}");
            ExitCode::from(EXIT_INVALID_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("modcool: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
