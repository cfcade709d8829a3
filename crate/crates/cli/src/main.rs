//! `daseg`: synthesize data, train, finetune, evaluate and verify
//! domain-adaptive segmentation models.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use daseg::data::Shift;
use daseg::losses::Method;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "daseg", version, about = "Domain-adaptive segmentation of EM-like volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic source/target volume pair.
    Synth(SynthArgs),
    /// Unsupervised phase: source-only (ft) or domain adaptation.
    Train(TrainArgs),
    /// Supervised finetuning on a fraction of the target labels.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on the target test split and export images.
    Eval(EvalArgs),
    /// Run gradient checks, loss oracles and structural invariants.
    Verify,
    /// Full protocol for several methods: train, evaluate, finetuning curves.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// One of: invert, contrast-noise, anisotropy-blur.
    #[arg(long, value_parser = parse_shift)]
    pub shift: Shift,
    #[arg(long)]
    pub out: PathBuf,
    /// Volume shape Z,Y,X.
    #[arg(long, value_parser = parse_shape)]
    pub shape: Option<[usize; 3]>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Flags that override values of the JSON config file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub finetune_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Patch size HxW, e.g. 32x32.
    #[arg(long, value_parser = parse_hw)]
    pub patch: Option<[usize; 2]>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Level-1 discrepancy weight (mmd, coral, dann); doubled per level.
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Aligned encoder levels, e.g. 1,2.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    #[arg(long)]
    pub grl_lambda: Option<f64>,
    /// Source reconstruction weight (ynet).
    #[arg(long)]
    pub lambda_recon_source: Option<f64>,
    /// Target reconstruction weight (ynet).
    #[arg(long)]
    pub lambda_recon_target: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Dataset directory written by `synth` (or laid out the same way).
    #[arg(long)]
    pub data: PathBuf,
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the checkpoint already in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Fraction of target training slices whose labels are used, in (0, 1].
    #[arg(long)]
    pub fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset directory; defaults to the one recorded next to the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Test-split slices to export as PGM images, e.g. 0,5.
    #[arg(long, value_delimiter = ',')]
    pub slices: Vec<usize>,
    /// Dataset column name in table.csv.
    #[arg(long, default_value = "synthetic")]
    pub dataset: String,
    /// Tile size HxW for sliding-window inference.
    #[arg(long, value_parser = parse_hw)]
    pub tile: Option<[usize; 2]>,
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Export source and target activation maps of the first tile of this test slice.
    #[arg(long)]
    pub activations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Methods to run, e.g. ft,ynet,dann.
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "ft,mmd,coral,dann,ynet")]
    pub methods: Vec<Method>,
    /// Finetuning label fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.15,0.5,1")]
    pub fractions: Vec<f64>,
    #[arg(long, default_value = "synthetic")]
    pub dataset: String,
    #[command(flatten)]
    pub overrides: Overrides,
}

fn parse_shift(s: &str) -> Result<Shift, String> {
    s.parse::<Shift>().map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn parse_dims<const N: usize>(s: &str, sep: char) -> Result<[usize; N], String> {
    let parts: Vec<&str> = s.split(sep).collect();
    if parts.len() != N {
        return Err(format!("expected {N} values separated by '{sep}', got {s:?}"));
    }
    let mut out = [0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("not a size: {p:?}"))?;
    }
    Ok(out)
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    parse_dims(s, ',')
}

fn parse_hw(s: &str) -> Result<[usize; 2], String> {
    parse_dims(s, 'x')
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Verify => commands::verify(),
        Command::Experiment(a) => commands::experiment(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
