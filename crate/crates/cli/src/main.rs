//! `farbench`: generate and train toy models, compile FaR artifacts,
//! validate them, simulate latency, attack, and report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;
use crate::config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "farbench", version, about = "FaR hardening workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the dataset description and an untrained model (init.fmdl).
    Gen,
    /// Train the model and write trained.fmdl.
    Train,
    /// Rank lanes by gradient saliency and report dead lanes.
    Analyze,
    /// Compile FaR: hardened.fmdl plus layerN.fmap / layerN.fshd per layer.
    FarCompile,
    /// Check every layer's FaR blobs against the hardened model.
    Validate,
    /// Cycle counts for one GEMM or a whole transformer shape.
    Simulate(SimulateArgs),
    /// Bit-flip attacks on the baseline and hardened models.
    Attack,
    /// Latency overhead table and robustness table, as text and JSON.
    Report,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// GEMM as MxKxN (activation rows, inputs, outputs).
    #[arg(long, default_value = "32x32x32", conflicts_with = "vit")]
    gemm: String,
    /// Transformer shape: vit-mnist, vit-cifar10 or vit-cifar100.
    #[arg(long)]
    vit: Option<String>,
}

/// Settings shared by every subcommand. Each one overrides the config file,
/// which overrides the built-in default.
#[derive(Args, Debug, Default)]
struct Knobs {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the dataset, initialization, training and attacks [default: 7].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for every artifact [default: farbench-out].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// FMDL to read instead of the previous stage's output.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Number of classes [default: 4].
    #[arg(long, global = true)]
    classes: Option<usize>,
    /// Informative input features [default: 24].
    #[arg(long, global = true)]
    informative_dims: Option<usize>,
    /// Always-zero input features [default: 8].
    #[arg(long, global = true)]
    dead_dims: Option<usize>,
    /// Samples per class [default: 150].
    #[arg(long, global = true)]
    samples_per_class: Option<usize>,
    /// Class mean distance from the shared center, in noise units [default: 3.5].
    #[arg(long, global = true)]
    separation: Option<f64>,
    /// Shift of every informative feature, in noise units [default: 2].
    #[arg(long, global = true)]
    offset: Option<f64>,
    /// Per-feature noise standard deviation [default: 1].
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// Hidden widths, comma separated [default: 64,64].
    #[arg(long, global = true)]
    hidden: Option<String>,
    /// Hidden activation: identity, relu or gelu [default: relu].
    #[arg(long, global = true)]
    activation: Option<String>,
    /// Training epochs [default: 60].
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// SGD learning rate [default: 0.1].
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Minibatch size, 0 for full batch [default: 32].
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// SGD momentum [default: 0.9].
    #[arg(long, global = true)]
    momentum: Option<f64>,
    /// Share of each row's lanes FaR may touch [default: 0.15].
    #[arg(long = "budget", global = true)]
    budget_fraction: Option<f64>,
    /// Rewire group size, 2 or 3 [default: 2].
    #[arg(long, global = true)]
    div: Option<u8>,
    /// Dead lane threshold as a multiple of the mean activation [default: 0.01].
    #[arg(long, global = true)]
    deadness_ratio: Option<f64>,
    /// Spend leftover budget on SKIP entries [default: false].
    #[arg(long, global = true)]
    emit_skips: Option<bool>,
    /// Overlap operand selection with the multiplier stage [default: true].
    #[arg(long, global = true)]
    overlap: Option<bool>,
    /// Separate read ports for weights and shadow values [default: true].
    #[arg(long, global = true)]
    dual_port: Option<bool>,
    /// Charge the pipeline fill once per layer [default: false].
    #[arg(long, global = true)]
    amortize_fill: Option<bool>,
    /// Processing elements [default: 4].
    #[arg(long, global = true)]
    pe_count: Option<usize>,
    /// Shared DMA bandwidth in bytes per cycle [default: 64].
    #[arg(long, global = true)]
    dma_bytes_per_cycle: Option<u64>,
    /// Tile buffers per PE [default: 2].
    #[arg(long, global = true)]
    tile_buffer_depth: Option<usize>,
    /// Attack candidates per layer per step [default: 10].
    #[arg(long, global = true)]
    top_n: Option<usize>,
    /// Maximum committed flips per attack [default: 20].
    #[arg(long, global = true)]
    flip_budget: Option<usize>,
    /// Accuracy the attack aims for [default: chance + 0.1].
    #[arg(long, global = true)]
    objective_accuracy: Option<f64>,
    /// Attacker's view: vanilla or far-aware [default: vanilla].
    #[arg(long, global = true)]
    attacker_view: Option<String>,
    /// Attack seeds per model [default: 5].
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Samples per attack batch [default: 64].
    #[arg(long, global = true)]
    attack_batch: Option<usize>,
}

impl Knobs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    out.push((stringify!($f), v.to_string()));
                }
            )*};
        }
        push!(
            seed, classes, informative_dims, dead_dims, samples_per_class, separation, offset, noise, hidden,
            activation, epochs, learning_rate, batch_size, momentum, budget_fraction, div, deadness_ratio,
            emit_skips, overlap, dual_port, amortize_fill, pe_count, dma_bytes_per_cycle, tile_buffer_depth, top_n,
            flip_budget, objective_accuracy, attacker_view, trials, attack_batch
        );
        if let Some(p) = &self.out_dir {
            out.push(("out_dir", p.display().to_string()));
        }
        if let Some(p) = &self.model {
            out.push(("model", p.display().to_string()));
        }
        out
    }

    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.pairs() {
            cfg.set(k, &v)?;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.knobs.resolve().map_err(|e| Failure::config(format!("{e:#}")))?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Analyze => commands::analyze(&cfg),
        Command::FarCompile => commands::far_compile(&cfg),
        Command::Validate => commands::validate(&cfg),
        Command::Simulate(a) => commands::simulate(&cfg, &a.gemm, a.vit.as_deref()),
        Command::Attack => commands::attack(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let failure = e.downcast_ref::<Failure>().cloned().unwrap_or_else(|| Failure::other(format!("{e:#}")));
            eprintln!("{}", serde_json::to_string(&failure).expect("plain struct"));
            ExitCode::from(failure.exit_code())
        }
    }
}
