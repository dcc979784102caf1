//! `gswe`: generate Set-Circles data, train GSWE models, embed sets and
//! evaluate embeddings.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ModelFlags, TrainFlags};

#[derive(Debug, Parser)]
#[command(
    name = "gswe",
    version,
    about = "Generalized sliced-Wasserstein set embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic point-set dataset.
    Gen(GenArgs),
    /// Train slicer, references and backbone with a self-supervised loss.
    Train(TrainArgs),
    /// Embed every set of a dataset with a trained checkpoint.
    Embed(EmbedArgs),
    /// GSW distance between two sets.
    Distance(DistanceArgs),
    /// 1-nearest-neighbour accuracy of frozen embeddings.
    EvalNn(EvalNnArgs),
    /// Stratified k-fold accuracy of pooling plus a classifier head.
    EvalCv(EvalCvArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Task {
    SetCircles,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Dataset family.
    #[arg(long, value_enum, default_value = "set-circles")]
    task: Task,
    /// Output point-set file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of training sets.
    #[arg(long = "n-sets", alias = "n-train", default_value_t = 400)]
    n_train: usize,
    /// Number of test sets.
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Circle radii of class 0 and class 1, comma separated.
    #[arg(long, default_value = "1.0,1.3", value_parser = parse_pair)]
    radii: (f64, f64),
    /// Inclusive range of set sizes, `MIN,MAX`.
    #[arg(long, default_value = "8,21", value_parser = parse_size_range)]
    sizes: (usize, usize),
    /// Overwrite an existing output file.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Point-set file; sets tagged `train` are used.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss curve CSV (default: checkpoint path with `.loss.csv` appended).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// JSON file `{"model": {..}, "train": {..}}`; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Point-set file; every set is embedded, in file order.
    #[arg(long)]
    data: PathBuf,
    /// Embedding file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DistanceArgs {
    /// Checkpoint whose backbone and slicer define the slices. Without one,
    /// `--slices` random linear directions are drawn from `--seed`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Point-set file holding the first set.
    #[arg(long)]
    set_a: PathBuf,
    /// Point-set file holding the second set.
    #[arg(long)]
    set_b: PathBuf,
    /// Index of the set within `--set-a`.
    #[arg(long, default_value_t = 0)]
    index_a: usize,
    /// Index of the set within `--set-b`.
    #[arg(long, default_value_t = 0)]
    index_b: usize,
    /// Order of the Wasserstein distance (ignored with a checkpoint).
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Random linear slices when no checkpoint is given.
    #[arg(long, default_value_t = 64)]
    slices: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also optimize a single slice (max-GSW) and report it.
    #[arg(long)]
    max_gsw: bool,
    /// Ascent steps for max-GSW.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Ascent learning rate for max-GSW.
    #[arg(long, default_value_t = 0.05)]
    max_lr: f64,
}

#[derive(Debug, Args)]
struct EvalNnArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Training (gallery) sets. Without `--test`, the file's split tags
    /// decide which sets are gallery and which are queries.
    #[arg(long)]
    train: PathBuf,
    /// Query sets; every set in the file is used.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Results CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalCvArgs {
    /// Labelled point-set file; all sets take part regardless of split.
    #[arg(long)]
    data: PathBuf,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Training epochs per fold.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Width of the classifier's hidden layer.
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file `{"model": {..}}`; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Results CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or("expected two comma-separated numbers")?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

fn parse_size_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

/// Failure with its exit code.
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl From<gswe::Error> for Failure {
    fn from(e: gswe::Error) -> Self {
        let code = match e.kind() {
            gswe::ErrorKind::Usage => 1,
            gswe::ErrorKind::Data => 2,
            gswe::ErrorKind::Numerical => 3,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: 1,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            msg: msg.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Embed(a) => commands::embed(a),
        Command::Distance(a) => commands::distance(a),
        Command::EvalNn(a) => commands::eval_nn(a),
        Command::EvalCv(a) => commands::eval_cv(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
