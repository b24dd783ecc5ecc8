//! `raidsim run <config>` and `raidsim suite <name>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use raidsim::experiments::{self, RunPlan, SUITES};
use raidsim::Error;

/// Output directory used when neither `--out` nor the config names one.
const OUT_DIR_ENV: &str = "RAIDSIM_OUT_DIR";

#[derive(Parser)]
#[command(name = "raidsim", version, about = "Monte Carlo DU/DL simulator for RAID and PMDS arrays")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Confidence level for error bars: 90, 95 or 99.
    #[arg(long, global = true)]
    confidence: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments described by a config file.
    Run {
        /// INI experiment file.
        config: PathBuf,
        /// Output directory (default: [output] dir, then $RAIDSIM_OUT_DIR, then ./raidsim-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed of every experiment.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a built-in suite.
    Suite {
        /// Suite name, see `raidsim suites`.
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (default: $RAIDSIM_OUT_DIR, then ./raidsim-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in suites.
    Suites,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parameter(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn out_dir(flag: Option<PathBuf>, plan: &RunPlan) -> PathBuf {
    flag.or_else(|| plan.out_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("raidsim-out"))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let confidence = cli.confidence.as_deref().map(experiments::parse_confidence_flag).transpose()?;
    let (mut plan, out) = match cli.command {
        Command::Suites => {
            SUITES.iter().for_each(|s| println!("{s}"));
            return Ok(());
        }
        Command::Run { config, out, seed } => {
            let mut plan = experiments::load_config(&config)?;
            if let Some(s) = seed {
                plan.set_seed(s);
            }
            let dir = out_dir(out, &plan);
            (plan, dir)
        }
        Command::Suite { name, seed, out } => {
            let plan = experiments::suite(&name, seed)?;
            let dir = out_dir(out, &plan);
            (plan, dir)
        }
    };
    if let Some(c) = confidence {
        plan.set_confidence(c);
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Config("config error: --threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Failure::Runtime(format!("cannot start worker pool: {e}")))?;
    let report = pool.install(|| experiments::run(&plan, &out))?;
    print!("{}", experiments::summary_text(&report));
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
