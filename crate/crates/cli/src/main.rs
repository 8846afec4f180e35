use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dlsd_core::harness::{cmd_ber, cmd_complexity, cmd_decode, cmd_gen_data, cmd_train, ExperimentConfig};
use dlsd_core::Error;

#[derive(Parser)]
#[command(name = "dlsd", version, about = "Learned-radius sphere decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled training data for every SNR in the grid.
    GenData(Common),
    /// Train one radius network per SNR.
    Train(Common),
    /// Monte Carlo bit error rate of the configured detectors.
    Ber(Common),
    /// Empirical and analytic decoding complexity.
    Complexity(Common),
    /// Decode one observation file with a trained model.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "obs")]
        observation: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for datasets, models and CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated SNR grid in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = &self.snr {
            cfg.snr_grid_db = s.clone();
        }
        if let Some(q) = self.q {
            cfg.q = q;
            cfg.label_q = cfg.label_q.max(q);
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(c) => {
            for p in cmd_gen_data(&c.resolve()?)? {
                println!("{}", p.display());
            }
        }
        Command::Train(c) => {
            for s in cmd_train(&c.resolve()?)? {
                println!("{} {} final_loss={:.6e}", s.model_path.display(), s.log_path.display(), s.final_loss);
            }
        }
        Command::Ber(c) => {
            let (path, _) = cmd_ber(&c.resolve()?)?;
            println!("{}", path.display());
        }
        Command::Complexity(c) => {
            let (path, _) = cmd_complexity(&c.resolve()?)?;
            println!("{}", path.display());
        }
        Command::Decode { model, observation } => {
            let record = cmd_decode(&model, &observation)?;
            let text = serde_json::to_string_pretty(&record).map_err(|e| Error::Numeric(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
