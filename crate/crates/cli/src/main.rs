use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod table;

use commands::SimulateArgs;
use error::CliError;

/// Boosted conditional transformation models.
#[derive(Parser)]
#[command(name = "ctm", version, about)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, env = "CTM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from a data CSV and a TOML config.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Model document to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration trace CSV (default: <out>.trace.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Conditional distribution function at each row and response value.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Response values as `lo:hi:n` or `v1,v2,...` (default: the training grid).
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip rows that cannot be evaluated instead of failing.
        #[arg(long)]
        skip_bad: bool,
    },
    /// Conditional quantiles or prediction intervals.
    Quantile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated probabilities (default 0.1,0.5,0.9).
        #[arg(long)]
        taus: Option<String>,
        /// Emit the interval (Q(a), Q(1 - a)) instead.
        #[arg(long)]
        interval: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        skip_bad: bool,
    },
    /// Residual diagnostics and monotonicity check.
    Diagnose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Response column (default: the one the model was fitted on).
        #[arg(long)]
        response: Option<String>,
        /// Write residuals to this CSV.
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Run the varying-coefficient simulation study.
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        replications: usize,
        /// Full-scale study (100 replications).
        #[arg(long, conflicts_with = "replications")]
        full: bool,
        /// Comma-separated numbers of noise variables.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        noise: Vec<usize>,
        /// Noise levels 0 to 5.
        #[arg(long, conflicts_with = "noise")]
        noise_sweep: bool,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        observations: usize,
        /// Boosting iterations (largest candidate for the stopping iteration).
        #[arg(long)]
        iterations: Option<usize>,
        /// Bootstrap replications used to select the stopping iteration.
        #[arg(long)]
        bootstrap: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set thread count: {e}")))?;
    }
    match cli.command {
        Command::Fit {
            data,
            config,
            out,
            trace,
        } => commands::cmd_fit(&data, &config, &out, trace.as_deref()),
        Command::Predict {
            model,
            data,
            grid,
            out,
            skip_bad,
        } => commands::cmd_predict(&model, &data, grid.as_deref(), out.as_deref(), skip_bad),
        Command::Quantile {
            model,
            data,
            taus,
            interval,
            out,
            skip_bad,
        } => commands::cmd_quantile(&model, &data, taus.as_deref(), interval, out.as_deref(), skip_bad),
        Command::Diagnose {
            model,
            data,
            response,
            residuals,
        } => commands::cmd_diagnose(&model, &data, response.as_deref(), residuals.as_deref()),
        Command::Simulate {
            out_dir,
            replications,
            full,
            noise,
            noise_sweep,
            seed,
            observations,
            iterations,
            bootstrap,
        } => commands::cmd_simulate(&SimulateArgs {
            out_dir,
            replications: if full { 100 } else { replications },
            noise: if noise_sweep { (0..=5).collect() } else { noise },
            seed,
            observations,
            iterations,
            bootstrap,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ctm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
