use std::path::PathBuf;
use std::process;
use std::time::Instant;

use clap::{Parser, Subcommand};

use cropseries_cli::commands::{
    cmd_adapt, cmd_covercrops, cmd_early, cmd_evaluate, cmd_generate, cmd_train, Ctx,
};

/// Synthetic crop time series: generation, classifiers, adaptation, reports.
#[derive(Parser)]
#[command(name = "cropseries", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Commands,

    /// JSON config file; command flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Commands {
    /// Synthesize scenario datasets as CSV files with JSON sidecars
    Generate {
        /// Override the pixel count of every scenario.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a recurrent classifier and persist the bundle
    Train {
        /// Dataset CSV to split and train on.
        #[arg(long)]
        input: Option<PathBuf>,
        /// `lstm_att` or `lstm`.
        #[arg(long)]
        method: Option<String>,
    },
    /// Fit a domain mapper against a frozen trained model
    Adapt {
        /// Trained model JSON.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Source dataset CSV the model was trained on.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Target dataset CSV to adapt to; labels are ignored.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Train every requested method and report AUC/F1 per scenario
    Evaluate {
        /// Dataset CSV split into train and in-domain test halves.
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Prefix-confidence curves, detection summary, and an SVG chart
    Early {
        /// Trained model JSON.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset CSV to analyze.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Detect post-harvest cover crops from raw NDVI trajectories
    Covercrops {
        /// Dataset CSV to scan.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; they exit clean.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            process::exit(code);
        }
    };

    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out,
        config: cli.config,
    };
    let started = Instant::now();
    let (name, result) = match cli.command {
        Commands::Generate { count } => ("generate", cmd_generate(&ctx, count)),
        Commands::Train { input, method } => ("train", cmd_train(&ctx, input, method)),
        Commands::Adapt {
            model,
            source,
            target,
        } => ("adapt", cmd_adapt(&ctx, model, source, target)),
        Commands::Evaluate { train } => ("evaluate", cmd_evaluate(&ctx, train)),
        Commands::Early { model, input } => ("early", cmd_early(&ctx, model, input)),
        Commands::Covercrops { input } => ("covercrops", cmd_covercrops(&ctx, input)),
    };

    match result {
        Ok(()) => {
            // Timing stays on stderr so output files are seed-reproducible.
            eprintln!("{name}: {:.2}s", started.elapsed().as_secs_f64());
        }
        Err(e) => {
            eprintln!("error: {e}");
            process::exit(e.exit_code());
        }
    }
}
