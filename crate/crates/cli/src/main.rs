//! `prominence`: batch entry points for the prominence pipeline.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use manifest::{config_hash, Manifest};

#[derive(Debug, Parser)]
#[command(
    name = "prominence",
    version,
    about = "Prominent relative-attribute differences: training, evaluation, search and descriptions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic dataset with oracle labels.
    Synth(SynthArgs),
    /// Train one relative-attribute ranker per attribute.
    TrainRanker(TrainRankerArgs),
    /// Write standardized attribute scores for every dataset image.
    Score(ScoreArgs),
    /// Train the prominence model and optional baselines on all vote labels.
    TrainProminence(TrainProminenceArgs),
    /// Rank attributes by prominence for one image pair.
    Predict(PredictArgs),
    /// Cross-validate methods and write top-k accuracy curves.
    Evaluate(EvaluateArgs),
    /// Run the simulated-user search experiment.
    SearchSim(SearchSimArgs),
    /// Describe the prominent differences of one image pair.
    Describe(DescribeArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Re-run a command from its manifest and verify its outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Gap and mean-strength terms both decide prominence.
    Mixed,
    /// Only mean strength decides prominence.
    BetaDominated,
    /// Prominence is exactly the widest latent gap.
    WidestOnly,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of attributes.
    #[arg(long = "m", default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 400)]
    pub images: usize,
    /// Descriptor dimension (default max(32, m)).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = Profile::Mixed)]
    pub profile: Profile,
    #[arg(long, default_value_t = 4000)]
    pub ordered_pairs: usize,
    #[arg(long, default_value_t = 1000)]
    pub similar_pairs: usize,
    #[arg(long, default_value_t = 4000)]
    pub vote_pairs: usize,
    /// Softmax temperature of simulated annotators.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Descriptor noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub annotators: u32,
    /// Seed of the latent-to-descriptor map.
    #[arg(long, default_value_t = 1)]
    pub map_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Dataset directory with vocab.json, images.jsonl, pairs.csv and votes.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Required votes per pair; 0 disables the check.
    #[arg(long, default_value_t = 7)]
    pub annotators: u32,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RankerArgs {
    /// Ranker regularization constant.
    #[arg(long = "ranker-c", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Dead zone of the similar-pair hinge.
    #[arg(long, default_value_t = 0.1)]
    pub similar_margin: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainRankerArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub ranker: RankerArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreSourceArgs {
    /// Model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// External `image_id,score_0,...` CSV used instead of the model's rankers.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file with a ranker section.
    #[arg(long)]
    pub model: PathBuf,
    /// Scores CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainProminenceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub source: ScoreSourceArgs,
    /// Methods to fit, comma separated (model, widest, widest-plain, single, prior).
    #[arg(long, default_value = "model,widest,single,prior", value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Pair feature map: mean-abs-diff, abs-diff, product or weighted-average:W.
    #[arg(long, default_value = "mean-abs-diff")]
    pub feature_map: String,
    /// Classifier regularization constant.
    #[arg(long = "svm-c", default_value_t = 1.0)]
    pub c: f64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub source: ScoreSourceArgs,
    /// Image ids `i,j`.
    #[arg(long)]
    pub pair: String,
    #[arg(long, default_value = "model")]
    pub method: String,
    /// Also write the JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Most-voted attribute of each pair.
    Votes,
    /// Oracle labels from `oracle.jsonl` (synthetic data only).
    Oracle,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub ranker: RankerArgs,
    /// Fixed external scores instead of per-fold rankers.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value = "model,widest,single,prior", value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 5)]
    pub k_max: usize,
    /// Labels to evaluate against; training always uses votes.
    #[arg(long, value_enum, default_value_t = LabelSource::Votes)]
    pub labels: LabelSource,
    #[arg(long, default_value = "mean-abs-diff")]
    pub feature_map: String,
    #[arg(long = "svm-c", default_value_t = 1.0)]
    pub svm_c: f64,
    /// Output directory for curves.csv, curves.dat and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    /// Generator utility on latent strengths (needs synth_spec.json and latents.jsonl).
    Utility,
    /// Most-voted attribute where annotated, else the widest gap.
    Votes,
    /// Widest gap of latent strengths, or of scores without latents.
    Widest,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchSimArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub source: ScoreSourceArgs,
    #[arg(long, default_value_t = 200)]
    pub targets: usize,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    #[arg(long, value_enum, default_value_t = OracleKind::Utility)]
    pub oracle: OracleKind,
    #[arg(long, default_value_t = 16)]
    pub page_size: usize,
    /// References per feedback round.
    #[arg(long, default_value_t = 8)]
    pub references: usize,
    /// Probability that feedback names the prominent difference.
    #[arg(long, default_value_t = 0.75)]
    pub prominent_fraction: f64,
    /// Minimum score gap of a true difference.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    /// Output directory for traces.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub source: ScoreSourceArgs,
    /// Image ids `i,j`.
    #[arg(long)]
    pub pair: String,
    #[arg(short = 'k', default_value_t = 3)]
    pub k: usize,
    /// Also write the JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, env = "PROMINENCE_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "PROMINENCE_ANNOTATORS", default_value_t = 7)]
    pub annotators: u32,
    #[arg(long, env = "PROMINENCE_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "PROMINENCE_SCORES")]
    pub scores: Option<PathBuf>,
    #[arg(long, env = "PROMINENCE_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "PROMINENCE_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Directory of static UI assets and images.
    #[arg(long, env = "PROMINENCE_ASSETS")]
    pub assets: Option<PathBuf>,
    /// Session lifetime in seconds.
    #[arg(long, env = "PROMINENCE_SESSION_TTL", default_value_t = 3600)]
    pub session_ttl: u64,
    #[arg(long, env = "PROMINENCE_MAX_SESSIONS", default_value_t = 1024)]
    pub max_sessions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Files a command read and wrote, and where its manifest goes.
pub struct Outcome {
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub manifest: Option<PathBuf>,
}

fn command_name(config: &serde_json::Value) -> String {
    config["command"].as_str().unwrap_or_default().to_string()
}

/// Runs one parsed command and writes its manifest.
fn execute(command: Command, args: Vec<String>) -> Result<()> {
    if let Command::Replay(r) = &command {
        return replay(&r.manifest);
    }
    let config = serde_json::to_value(&command)?;
    let hash = config_hash(&config);
    let outcome = match command {
        Command::Synth(a) => commands::synth(&a)?,
        Command::TrainRanker(a) => commands::train_ranker(&a, &hash)?,
        Command::Score(a) => commands::score(&a)?,
        Command::TrainProminence(a) => commands::train_prominence(&a, &hash)?,
        Command::Predict(a) => commands::predict(&a)?,
        Command::Evaluate(a) => commands::evaluate(&a, &hash)?,
        Command::SearchSim(a) => commands::search_sim(&a, &hash)?,
        Command::Describe(a) => commands::describe(&a)?,
        Command::Serve(a) => commands::serve(&a)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    if let Some(path) = &outcome.manifest {
        let m = Manifest::new(
            &command_name(&config),
            args,
            config,
            outcome.seed,
            &outcome.inputs,
            &outcome.outputs,
        )?;
        m.write(path)?;
        log::info!("wrote manifest {}", path.display());
    }
    Ok(())
}

fn replay(path: &std::path::Path) -> Result<()> {
    let m = Manifest::read(path)?;
    m.check_inputs()?;
    std::env::set_current_dir(&m.cwd)?;
    let mut argv = vec!["prominence".to_string()];
    argv.extend(m.args.iter().cloned());
    let cli = Cli::try_parse_from(&argv)?;
    if matches!(cli.command, Command::Replay(_) | Command::Serve(_)) {
        bail!("manifest does not record a replayable command");
    }
    execute(cli.command, m.args.clone())?;
    let bad = m.mismatched_outputs()?;
    if !bad.is_empty() {
        bail!("outputs differ from the manifest: {}", bad.join(", "));
    }
    println!("replayed `{}`: {} outputs identical", m.command, m.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match execute(cli.command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
