use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mimo_nope::harness::config::MONTE_CARLO_KEYS;
use mimo_nope::harness::{emit_figure_data, emit_se_check, ExperimentSpec, Figure, SpecBuilder};
use mimo_nope::Result;

/// Massive MU-MIMO equalization experiments.
#[derive(Parser)]
#[command(name = "mimo-nope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum antenna ratio per equalizer versus rate (analytic).
    Moar(Common),
    /// Achievable rates versus SNR (analytic).
    Rates(Common),
    /// Empirical versus predicted SIR with Gaussian symbols (Monte Carlo).
    SeCheck(Common),
    /// Symbol error rate versus the sweep variable (Monte Carlo).
    Ser(Common),
}

#[derive(Args)]
struct Common {
    /// key=value configuration file; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bs_antennas: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    snr_db_start: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    snr_db_stop: Option<f64>,
    #[arg(long)]
    snr_db_step: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// AMP iterations
    #[arg(long)]
    iters: Option<usize>,
    /// comma-separated, e.g. `zf,lmmse,nope`
    #[arg(long)]
    algorithms: Option<String>,
    /// qpsk, bpsk or gaussian
    #[arg(long)]
    constellation: Option<String>,
    /// worker threads, 0 = one per core
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Common {
    fn builder(&self) -> Result<SpecBuilder> {
        let mut b = match &self.config {
            Some(path) => SpecBuilder::from_file(path)?,
            None => SpecBuilder::new(),
        };
        let overrides: [(&str, Option<String>); 12] = [
            ("bs_antennas", self.bs_antennas.map(|v| v.to_string())),
            ("users", self.users.map(|v| v.to_string())),
            ("snr_db_start", self.snr_db_start.map(|v| v.to_string())),
            ("snr_db_stop", self.snr_db_stop.map(|v| v.to_string())),
            ("snr_db_step", self.snr_db_step.map(|v| v.to_string())),
            ("trials", self.trials.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("iters", self.iters.map(|v| v.to_string())),
            ("algorithms", self.algorithms.clone()),
            ("constellation", self.constellation.clone()),
            ("workers", self.workers.map(|v| v.to_string())),
            ("output", self.output.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                b.set(key, v)?;
            }
        }
        Ok(b)
    }
}

fn output_path(spec: &ExperimentSpec, default: &str) -> PathBuf {
    spec.output.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: Cli) -> Result<PathBuf> {
    match cli.command {
        Command::Moar(c) => {
            let spec = c.builder()?.build(&[])?;
            let out = output_path(&spec, "moar.csv");
            emit_figure_data(Figure::Moar, &spec, &out)?;
            Ok(out)
        }
        Command::Rates(c) => {
            let mut b = c.builder()?;
            if !b.contains("snr_db_start") {
                b.set_default("snr_db_start", -10)?;
                b.set_default("snr_db_stop", 25)?;
                b.set_default("snr_db_step", 1)?;
            }
            let spec = b.build(&[])?;
            let out = output_path(&spec, "rates.csv");
            emit_figure_data(Figure::Rates, &spec, &out)?;
            Ok(out)
        }
        Command::SeCheck(c) => {
            let mut b = c.builder()?;
            b.set_default("constellation", "gaussian")?;
            let spec = b.build(MONTE_CARLO_KEYS)?;
            let out = output_path(&spec, "se_check.csv");
            emit_se_check(&spec, &out)?;
            Ok(out)
        }
        Command::Ser(c) => {
            let spec = c.builder()?.build(MONTE_CARLO_KEYS)?;
            let out = output_path(&spec, "ser.csv");
            emit_figure_data(Figure::Ser, &spec, &out)?;
            Ok(out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(path) => {
            eprintln!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
