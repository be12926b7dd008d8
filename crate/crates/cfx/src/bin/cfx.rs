//! Thin command-line front end over the library pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfx::commands::{
    cmd_baseline, cmd_evaluate, cmd_explain, cmd_gen_toy, cmd_mine_vocab, cmd_prep, cmd_sweep_k,
    cmd_train_adapter, cmd_train_gnn, cmd_train_vae, BaselineMethod, CliError, ExplainFlags,
    Workspace,
};
use cfx::config::RunConfig;

/// Global counterfactual explanations for molecular GNN classifiers.
#[derive(Parser)]
#[command(name = "cfx", version, about)]
struct Cli {
    /// Flat key=value config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory for artifacts and manifests.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// One optional flag per configuration key (kebab-case).
#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Comma-separated element symbols, e.g. C,N,O,S.
    #[arg(long, global = true)]
    elements: Option<String>,
    #[arg(long, global = true)]
    fp_radius: Option<String>,
    #[arg(long, global = true)]
    fp_nbits: Option<String>,
    #[arg(long, global = true)]
    delta: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    beta: Option<String>,
    #[arg(long, global = true)]
    latent: Option<String>,
    #[arg(long, global = true)]
    adapter_hidden: Option<String>,
    #[arg(long, global = true)]
    enc_hidden: Option<String>,
    #[arg(long, global = true)]
    enc_layers: Option<String>,
    #[arg(long, global = true)]
    dec_hidden: Option<String>,
    #[arg(long, global = true)]
    frag_embed: Option<String>,
    #[arg(long, global = true)]
    atom_hidden: Option<String>,
    #[arg(long, global = true)]
    atom_embed: Option<String>,
    #[arg(long, global = true)]
    edge_hidden: Option<String>,
    #[arg(long, global = true)]
    max_fragments: Option<String>,
    #[arg(long, global = true)]
    gnn_hidden: Option<String>,
    #[arg(long, global = true)]
    gnn_layers: Option<String>,
    /// `concat` or `additive`.
    #[arg(long, global = true)]
    gnn_update: Option<String>,
    #[arg(long, global = true)]
    gnn_lr: Option<String>,
    #[arg(long, global = true)]
    gnn_epochs: Option<String>,
    #[arg(long, global = true)]
    gnn_batch: Option<String>,
    #[arg(long, global = true)]
    vae_lr: Option<String>,
    #[arg(long, global = true)]
    vae_epochs: Option<String>,
    #[arg(long, global = true)]
    vae_batch: Option<String>,
    #[arg(long, global = true)]
    adapter_lr: Option<String>,
    #[arg(long, global = true)]
    ppo_clip: Option<String>,
    #[arg(long, global = true)]
    ppo_epochs: Option<String>,
    #[arg(long, global = true)]
    ppo_kl_limit: Option<String>,
    #[arg(long, global = true)]
    updates: Option<String>,
    #[arg(long, global = true)]
    episodes_per_update: Option<String>,
    #[arg(long, global = true)]
    n_samples: Option<String>,
    #[arg(long, global = true)]
    ucb_c: Option<String>,
    #[arg(long, global = true)]
    t_train: Option<String>,
    #[arg(long, global = true)]
    t_infer: Option<String>,
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true)]
    beam: Option<String>,
    #[arg(long, global = true)]
    temperature: Option<String>,
    /// `set-coverage` or `modular`.
    #[arg(long, global = true)]
    selection_mode: Option<String>,
    #[arg(long, global = true)]
    vocab_size: Option<String>,
    #[arg(long, global = true)]
    min_atom_count: Option<String>,
    #[arg(long, global = true)]
    explain_class: Option<String>,
    #[arg(long, global = true)]
    adapter_inputs_cap: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("seed", &self.seed),
            ("elements", &self.elements),
            ("fp-radius", &self.fp_radius),
            ("fp-nbits", &self.fp_nbits),
            ("delta", &self.delta),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("latent", &self.latent),
            ("adapter-hidden", &self.adapter_hidden),
            ("enc-hidden", &self.enc_hidden),
            ("enc-layers", &self.enc_layers),
            ("dec-hidden", &self.dec_hidden),
            ("frag-embed", &self.frag_embed),
            ("atom-hidden", &self.atom_hidden),
            ("atom-embed", &self.atom_embed),
            ("edge-hidden", &self.edge_hidden),
            ("max-fragments", &self.max_fragments),
            ("gnn-hidden", &self.gnn_hidden),
            ("gnn-layers", &self.gnn_layers),
            ("gnn-update", &self.gnn_update),
            ("gnn-lr", &self.gnn_lr),
            ("gnn-epochs", &self.gnn_epochs),
            ("gnn-batch", &self.gnn_batch),
            ("vae-lr", &self.vae_lr),
            ("vae-epochs", &self.vae_epochs),
            ("vae-batch", &self.vae_batch),
            ("adapter-lr", &self.adapter_lr),
            ("ppo-clip", &self.ppo_clip),
            ("ppo-epochs", &self.ppo_epochs),
            ("ppo-kl-limit", &self.ppo_kl_limit),
            ("updates", &self.updates),
            ("episodes-per-update", &self.episodes_per_update),
            ("n-samples", &self.n_samples),
            ("ucb-c", &self.ucb_c),
            ("t-train", &self.t_train),
            ("t-infer", &self.t_infer),
            ("k", &self.k),
            ("beam", &self.beam),
            ("temperature", &self.temperature),
            ("selection-mode", &self.selection_mode),
            ("vocab-size", &self.vocab_size),
            ("min-atom-count", &self.min_atom_count),
            ("explain-class", &self.explain_class),
            ("adapter-inputs-cap", &self.adapter_inputs_cap),
        ]
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic dataset as a CSV.
    GenToy {
        /// Number of molecules.
        #[arg(long, default_value_t = 500)]
        count: usize,
    },
    /// Parse, filter, dedupe, and split a smiles,label CSV into a bundle.
    Prep {
        /// Input CSV with rows `smiles,label`.
        #[arg(long)]
        csv: PathBuf,
    },
    /// Train the property classifier on the bundle.
    TrainGnn,
    /// Mine the principal-subgraph vocabulary from the training split.
    MineVocab,
    /// Train (or, with --no-pretrain, randomly initialize) the generator.
    TrainVae {
        /// Skip pretraining: save a randomly initialized frozen generator.
        #[arg(long)]
        no_pretrain: bool,
    },
    /// Align the latent-shift adapter with PPO.
    TrainAdapter,
    /// Generate the explanation set for the explained inputs.
    Explain {
        /// Keep only each chain's final candidate.
        #[arg(long)]
        final_only: bool,
        /// Use a randomly initialized adapter without training.
        #[arg(long)]
        no_adapter_training: bool,
    },
    /// Run a comparison method and write its candidate pool.
    Baseline {
        /// sample | sa | walk
        method: String,
    },
    /// Score any candidate-pool file against the explained inputs.
    Evaluate {
        /// Candidate pool JSON produced by explain or baseline.
        #[arg(long)]
        pool: PathBuf,
    },
    /// Coverage/cost at k = 1..max-k for a candidate pool.
    SweepK {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 25)]
        max_k: usize,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    // Precedence: defaults < CFX_SEED env < config file < flags.
    if let Ok(seed) = std::env::var("CFX_SEED") {
        config
            .set("seed", &seed)
            .map_err(|e| CliError::Config(format!("CFX_SEED: {e}")))?;
    }
    if let Some(path) = &cli.config {
        config
            .apply_file(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    for (key, value) in cli.overrides.pairs() {
        if let Some(v) = value {
            config
                .set(key, v)
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = build_config(cli)?;
    let ws = Workspace::new(config, cli.out.clone());
    match &cli.command {
        Command::GenToy { count } => cmd_gen_toy(&ws, *count),
        Command::Prep { csv } => cmd_prep(&ws, csv),
        Command::TrainGnn => cmd_train_gnn(&ws),
        Command::MineVocab => cmd_mine_vocab(&ws),
        Command::TrainVae { no_pretrain } => cmd_train_vae(&ws, *no_pretrain),
        Command::TrainAdapter => cmd_train_adapter(&ws),
        Command::Explain {
            final_only,
            no_adapter_training,
        } => cmd_explain(
            &ws,
            &ExplainFlags {
                final_only: *final_only,
                no_adapter_training: *no_adapter_training,
            },
        )
        .map(|_| ()),
        Command::Baseline { method } => {
            let method = match method.as_str() {
                "sample" => BaselineMethod::Sample,
                "sa" => BaselineMethod::Sa,
                "walk" => BaselineMethod::Walk,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown baseline `{other}` (expected sample, sa, or walk)"
                    )))
                }
            };
            cmd_baseline(&ws, method)
        }
        Command::Evaluate { pool } => cmd_evaluate(&ws, pool).map(|_| ()),
        Command::SweepK { pool, max_k } => cmd_sweep_k(&ws, pool, *max_k),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
