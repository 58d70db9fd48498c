//! `agentgen`: build agent zoos, train weight generators and run the
//! analyses on them. Every data file carries the tool version, the effective
//! configuration and the master seed; identical inputs give identical bytes.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "agentgen", version, about = "Cart-Pole agent zoos and a VAE over their weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (default: the config's `seed`, else 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a zoo of Cart-Pole agents and write it as a binary zoo file.
    TrainZoo(TrainZooArgs),
    /// Train the weight generator on a zoo.
    ///
    /// The curve CSV has columns: epoch, recon, kl, total (per-item means).
    TrainGen(TrainGenArgs),
    /// Draw networks from a generator and measure their survival times.
    ///
    /// Samples CSV: kind (sample|summary), index, survival_time, std. The
    /// summary row holds the mean in survival_time. Histogram CSV: bin_lo,
    /// bin_hi, count.
    Sample(SampleArgs),
    /// Measure the survival time of one weight vector.
    ///
    /// Output CSV: source, episodes, survival_time.
    Eval(EvalArgs),
    /// Convergence distances within a good and a bad group of networks.
    ///
    /// Pairs CSV: group, netA_id, netB_id, layer, CD_forward, CD_backward,
    /// CD_mean. Summary CSV: group, mean_survival, layer, pairs, mean_cd,
    /// std_cd. Heatmaps are correlation grids with row and column unit labels.
    Convergence(ConvergenceArgs),
    /// Survival along latent and weight-space lines between two zoo records.
    ///
    /// CSV: alpha, survival_latent, survival_weight, baseline_line.
    Interpolate(InterpolateArgs),
    /// Degrade one zoo record at several levels and repair it from samples.
    ///
    /// CSV: degradation_fraction, criterion, success, st_error,
    /// samples_used, trial.
    RepairSweep(RepairArgs),
    /// Train generators on shrinking zoo subsets and compare their samples.
    ///
    /// Per fraction: samples_<f>.csv and hist_<f>.csv as written by
    /// `sample`. efficiency.csv: fraction, records, mean, std, w1_to_trainset.
    EfficiencySweep(EfficiencyArgs),
}

#[derive(Debug, Args)]
struct TrainZooArgs {
    #[command(flatten)]
    common: Common,
    /// Number of training runs.
    #[arg(long)]
    n: Option<usize>,
    /// Records kept per run.
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long)]
    min_steps: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also export the records as JSON lines.
    #[arg(long)]
    jsonl: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Combined,
    Conditional,
    PerGroup,
}

#[derive(Debug, Args)]
struct TrainGenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    zoo: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Group for `--mode per-group`.
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleModeArg {
    Prior,
    Posterior,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// Records encoded in posterior mode.
    #[arg(long)]
    zoo: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<SampleModeArg>,
    /// Condition label (G1..G4) for conditional models.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    hist: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Weight file: 212 numbers as a JSON array or separated by whitespace or commas.
    #[arg(long, conflicts_with_all = ["zoo", "id"])]
    weights: Option<PathBuf>,
    #[arg(long, requires = "id")]
    zoo: Option<PathBuf>,
    #[arg(long, requires = "zoo")]
    id: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record one greedy episode as JSON lines.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    zoo: PathBuf,
    /// Generator to draw good networks from; without both models, networks come from the zoo.
    #[arg(long, requires = "bad_model")]
    good_model: Option<PathBuf>,
    #[arg(long, requires = "good_model")]
    bad_model: Option<PathBuf>,
    #[arg(long)]
    per_group: Option<usize>,
    #[arg(long)]
    reference_states: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Directory for correlation heatmap grids.
    #[arg(long)]
    heatmaps: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    zoo: PathBuf,
    #[arg(long)]
    id_a: u64,
    #[arg(long)]
    id_b: u64,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    max_alpha: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RepairArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    zoo: PathBuf,
    #[arg(long)]
    id: u64,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    sample_budget: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EfficiencyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    zoo: PathBuf,
    /// Comma-separated subset fractions.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("agentgen: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainZoo(a) => commands::train_zoo(a),
        Command::TrainGen(a) => commands::train_gen(a),
        Command::Sample(a) => commands::sample(a),
        Command::Eval(a) => commands::eval(a),
        Command::Convergence(a) => commands::convergence(a),
        Command::Interpolate(a) => commands::interpolate(a),
        Command::RepairSweep(a) => commands::repair_sweep(a),
        Command::EfficiencySweep(a) => commands::efficiency_sweep(a),
    }
}
