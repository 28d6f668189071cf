use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hipe::acquisition::AcquisitionKind;
use hipe::benchmarks::registry;
use hipe::experiment::{evaluate_acquisition, parse_seeds, run_experiment, ExperimentConfig, Mode};
use hipe::gp::Dataset;
use hipe::{BatchCandidate, Error};

#[derive(Parser)]
#[command(name = "hipe", about = "Batch initialization experiments for fully Bayesian GP models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write runs.csv plus one JSON record per seed.
    Run {
        /// JSON config file; flags below override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        benchmark: Option<String>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        batches: Option<usize>,
        /// Seed range such as 0..10, 0..=9 or 1,2,3.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Two-shot BO instead of pure active learning; without --config this
        /// also switches to the two-shot defaults (q = 24, two batches).
        #[arg(long)]
        two_shot: bool,
        /// Use the reduced Monte Carlo sizes.
        #[arg(long)]
        fast: bool,
    },
    /// Print the value of one acquisition for a batch given observed data.
    EvalAcq {
        #[arg(long)]
        algo: String,
        /// JSON file with {"points": [[...], ...]}.
        #[arg(long)]
        batch_file: PathBuf,
        /// JSON file with {"points": [[...]], "outcomes": [...]}; optional for an empty dataset.
        #[arg(long)]
        data_file: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// List the available benchmarks.
    BenchList,
    /// Print the version.
    Version,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME })
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, algo, benchmark, q, batches, seeds, out, two_shot, fast } => {
            let mut cfg = match (config.as_ref(), two_shot) {
                // without a file, two-shot starts from its own defaults
                (None, true) => ExperimentConfig::two_shot(),
                _ => match load_config(config.as_ref()) {
                    Ok(c) => c,
                    Err(e) => return exit_for(&e),
                },
            };
            if two_shot {
                cfg.mode = Mode::TwoShot;
            }
            if let Some(a) = algo {
                cfg.algo = a;
            }
            if let Some(b) = benchmark {
                cfg.benchmark = b;
            }
            if let Some(q) = q {
                cfg.q = q;
            }
            if let Some(b) = batches {
                cfg.batches = b;
            }
            if let Some(s) = seeds {
                match parse_seeds(&s) {
                    Ok(v) => cfg.seeds = v,
                    Err(e) => return exit_for(&e),
                }
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if fast {
                cfg = cfg.fast();
            }
            match run_experiment(&cfg) {
                Ok(outcome) => {
                    let failed = outcome.failed();
                    let total = outcome.records.len();
                    println!("{} of {total} seeds completed; results in {}", total - failed, cfg.out_dir.display());
                    if failed == 0 {
                        ExitCode::SUCCESS
                    } else if failed == total {
                        ExitCode::from(EXIT_RUNTIME)
                    } else {
                        ExitCode::from(EXIT_PARTIAL)
                    }
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::EvalAcq { algo, batch_file, data_file, config } => {
            let result = (|| {
                let cfg = load_config(config.as_ref())?;
                let kind = AcquisitionKind::from_name(&algo)
                    .ok_or_else(|| Error::Config(format!("unknown acquisition {algo:?}; expected bald|nipv|epig|hipe")))?;
                let batch: BatchCandidate = read_json(&batch_file)?;
                let data = match &data_file {
                    Some(p) => read_json::<Dataset>(p)?,
                    None => Dataset::empty(batch.dim()),
                };
                evaluate_acquisition(&cfg, kind, &data, &batch)
            })();
            match result {
                Ok(v) => {
                    println!("{v}");
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::BenchList => {
            println!("name,effective_dim,total_dim,noise_sd,optimum");
            for b in registry() {
                println!("{},{},{},{},{}", b.name, b.effective_dim, b.total_dim, b.noise_sd, b.optimum_value);
            }
            ExitCode::SUCCESS
        }
        Command::Version => {
            println!("hipe {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
    }
}
