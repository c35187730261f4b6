use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod files;

#[derive(Debug, Parser)]
#[command(name = "ricci-gsl", version, about = "Ricci-curvature graph structure and feature refinement")]
struct Cli {
    /// Seed for every random draw; overrides `seed` in a refine config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact and differentiable Ollivier-Ricci curvature on every edge.
    Curvature {
        graph: String,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Discrete Ricci flow with per-step curvature and spectral gap.
    Flow(FlowArgs),
    /// Spectral gap, Cheeger constant and curvature bound checks.
    Diagnose {
        graph: String,
        /// A refined output directory or a second graph to compare against.
        #[arg(long)]
        compare: Option<String>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Joint structure and feature refinement.
    Refine {
        #[arg(long)]
        graph: String,
        /// TOML file with training options; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Drop refined edges lighter than this from `a_star.json`.
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
    /// Downstream evaluation of a refined output directory.
    Eval {
        #[arg(value_enum)]
        task: EvalTask,
        /// Directory written by `refine`.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Number of clusters; defaults to the number of label classes.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Finite-difference check of every objective component.
    Gradcheck {
        #[arg(long, default_value = "barbell:3")]
        graph: String,
        #[arg(long, default_value_t = 20)]
        coords: usize,
    },
    /// Write a graph as Graphviz DOT.
    ExportDot { graph: String },
}

#[derive(Debug, Args)]
struct FlowArgs {
    graph: String,
    #[arg(long, value_enum, default_value_t = Direction::Backward)]
    direction: Direction,
    #[arg(long, default_value_t = 15)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    /// Write a DOT and JSON snapshot every k steps (0 disables).
    #[arg(long, default_value_t = 5)]
    snapshot_every: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Surgery: remove edges longer than this after each step.
    #[arg(long)]
    remove_above: Option<f64>,
    /// Surgery: also join non-adjacent pairs closer than this.
    #[arg(long, requires = "remove_above")]
    add_below: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalTask {
    Classify,
    Cluster,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let started = Instant::now();
    let outcome = commands::run(&cli);
    let code = match &outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if commands::is_numerical(e) {
                let _ = files::write_text(&cli.out.join("error.txt"), &format!("{e:#}\n"));
                2
            } else {
                1
            }
        }
    };
    if let Err(e) = files::write_manifest(&cli.out, &argv, cli.seed, started.elapsed(), code) {
        eprintln!("error: writing manifest: {e:#}");
    }
    ExitCode::from(code)
}
