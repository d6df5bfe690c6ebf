mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Stance classification over fused text and demographic features, with
/// feature ablation and Shapley explanations.
#[derive(Debug, Parser)]
#[command(name = "covexplain", version, args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines applied as flags beneath the command line.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Validate a JSON-Lines corpus and write it back with its schema.
    Ingest(IngestArgs),
    /// Hash-embed the tweet and description fields into CVXE files.
    Embed(EmbedArgs),
    /// Write the chronological slice manifest.
    Split(SplitArgs),
    /// Train one model on the balanced training slices.
    Train(TrainArgs),
    /// Evaluate a trained model on the held-out last slice.
    Eval(EvalArgs),
    /// Run the feature-set ablation grid.
    Ablate(AblateArgs),
    /// Explain one prediction with Shapley values.
    Explain(ExplainArgs),
    /// Render ablation CSVs and token attributions as a markdown report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus (JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the generator's categorical schema as JSON.
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
    /// `planted` (text and state carry disjoint signal) or `null` (no signal).
    #[arg(long, default_value = "planted")]
    pub preset: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub text_strength: Option<f64>,
    #[arg(long)]
    pub desc_strength: Option<f64>,
    #[arg(long)]
    pub offline_strength: Option<f64>,
    /// Probability of the pro class.
    #[arg(long)]
    pub class_balance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus in JSON Lines.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Categorical schema (JSON); inferred from the corpus when omitted.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    /// Validated corpus output.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the schema; defaults to the output path with a
    /// `.schema.json` extension.
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    /// Output paths as `tweet.cvxe,description.cvxe`; either may be empty.
    #[arg(long)]
    pub out: String,
    #[arg(long, default_value_t = 1024)]
    pub dim: usize,
    /// Hash seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Manifest output (`id,slice`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    /// Embedding files as `tweet.cvxe,description.cvxe`; either may be empty.
    #[arg(long, default_value = "")]
    pub emb: String,
    /// Number of chronological slices; the last is held out.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// `split-then-balance` or `balance-then-split`.
    #[arg(long, default_value = "split-then-balance")]
    pub balance: String,
}

#[derive(Debug, Args)]
pub struct ModelOpts {
    #[arg(long, default_value_t = 80)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1024)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ridge_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub svm_c: f64,
    /// RBF width; defaults to 1 / number of features.
    #[arg(long)]
    pub svm_gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model_opts: ModelOpts,
    /// `covexplain`, `linear`, `gnb` or `svm`.
    #[arg(long, default_value = "covexplain")]
    pub model: String,
    /// Comma-separated inputs, e.g. `tweet,description,state`.
    #[arg(long, default_value = "tweet,description,state,race,race_pic,gender")]
    pub features: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model bundle output.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss and accuracy CSV (MLP only).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Trained model bundle.
    #[arg(long)]
    pub model: PathBuf,
    /// Monte-Carlo dropout passes (0 = deterministic).
    #[arg(long, default_value_t = 0)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics CSV output (`metric,value`).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-record predictions CSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model_opts: ModelOpts,
    /// `all` or a comma-separated list of model names.
    #[arg(long, default_value = "all")]
    pub models: String,
    /// Restrict the grid to these row names (comma-separated), e.g. `Tweets,Online+Offline`.
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report CSV; the markdown table is written next to it.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Trained covexplain model bundle.
    #[arg(long)]
    pub model: PathBuf,
    /// Record id to explain.
    #[arg(long)]
    pub id: String,
    /// `token` (sampled, over tweet words) or `group` (exact, over feature segments).
    #[arg(long, default_value = "token")]
    pub unit: String,
    /// `pro`, `anti`, or `predicted`.
    #[arg(long, default_value = "predicted")]
    pub class: String,
    #[arg(long, default_value_t = 2000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed the tweet embeddings were hashed with.
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    /// Output prefix; writes PREFIX.csv, PREFIX.html and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Ablation report CSVs, comma-separated.
    #[arg(long)]
    pub inputs: String,
    /// Token attribution CSVs written by `explain`, comma-separated.
    #[arg(long, default_value = "")]
    pub attributions: String,
    /// Tokens listed per class.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Markdown output; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("COVEXPLAIN_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("COVEXPLAIN_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("COVEXPLAIN_THREADS must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::merge_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) if e.downcast_ref::<commands::Usage>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
