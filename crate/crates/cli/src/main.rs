//! `geomine` — corpus curation pipeline CLI.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use geomine_core::budget::{self, BudgetVector};
use geomine_core::cluster::ClusterModel;
use geomine_core::corpus::{self, Corpus};
use geomine_core::features;
use geomine_core::miner::{self, MinerConfig, SubClusterRecord};
use geomine_core::pipeline::{self, PipelineConfig};
use geomine_core::resolution::{self, SelectKOptions};
use geomine_core::scorer::{
    HttpScorer, OfflineScorer, ProbeRating, Scorer, StubScorer, PROBE_PROMPT, SCORER_URL_ENV,
};
use geomine_core::seed;
use geomine_core::synth::{self, SynthSpec};

#[derive(Parser)]
#[command(name = "geomine", version, about = "Geometric corpus curation pipeline")]
struct Cli {
    /// Increase log verbosity (-v, -vv)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize a corpus into a store directory
    Ingest(IngestArgs),
    /// Generate a synthetic corpus with planted structure
    Synth(SynthArgs),
    /// Fit a spherical k-means model at a fixed K
    Cluster(ClusterArgs),
    /// Sweep resolutions and select K* by rank stability
    SelectK(SelectKArgs),
    /// Extract per-cluster geometric features and scores
    Features(FeaturesArgs),
    /// Turn geometric scores into a softmax mixing budget
    Budget(BudgetArgs),
    /// Sub-cluster, score probes, and compute sampling weights
    Mine(MineArgs),
    /// Realize a token-budget sample from mined weights
    Sample(SampleArgs),
    /// Transport report comparing a selection against the corpus
    Evaluate(EvaluateArgs),
    /// Run the whole pipeline from a TOML config
    Run(RunArgs),
    /// Print the judge system prompt shipped for scorer endpoints
    ScorerPrompt,
}

#[derive(Args)]
struct IngestArgs {
    /// Metadata file, one JSON record per line
    #[arg(long)]
    meta: PathBuf,
    /// Binary embedding shard
    #[arg(long)]
    emb: PathBuf,
    /// Store directory to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 12)]
    k_true: usize,
    #[arg(long, default_value_t = 100.0)]
    concentration: f64,
    #[arg(long, default_value_t = 6000)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 4.0)]
    length_log_mean: f64,
    #[arg(long, default_value_t = 0.5)]
    length_log_std: f64,
    #[arg(long, default_value_t = 1)]
    languages_per_component: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Store directory to write (with ground_truth.json sidecar)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit on this fraction, then assign the full corpus
    #[arg(long, default_value_t = 1.0)]
    probe_fraction: f64,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectKArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    k_min: usize,
    #[arg(long)]
    k_max: usize,
    #[arg(long, default_value_t = 4)]
    k_step: usize,
    /// Comma-separated hop strides
    #[arg(long, default_value = "2,4,6", value_delimiter = ',')]
    strides: Vec<usize>,
    /// Comma-separated hop weights
    #[arg(long, default_value = "0.5,0.3,0.2", value_delimiter = ',')]
    hop_weights: Vec<f64>,
    #[arg(long, default_value_t = 20.0)]
    t_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_shrink: f64,
    #[arg(long, default_value_t = 0.2)]
    probe_fraction: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Independent k-means starts per fit
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Profile CSV path; a `_plot.csv` sibling is written next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Budget CSV path; a `.json` sibling is written next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// budget.json produced by the budget step
    #[arg(long)]
    budget: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value_t = 8)]
    probe_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ratings file for offline scoring
    #[arg(long)]
    offline_ratings: Option<PathBuf>,
    /// Fixed stub rating like "4,4,4,4" (testing)
    #[arg(long, value_delimiter = ',')]
    stub_rating: Option<Vec<u8>>,
    /// JSONL {"id", "content"} lookup for remote scorers
    #[arg(long)]
    texts: Option<PathBuf>,
    /// records.json output; a plan.csv sibling is written next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    store: PathBuf,
    /// records.json produced by the mine step
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    token_budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampled id list output (one id per line)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Sampled id list (one id per line)
    #[arg(long)]
    ids: PathBuf,
    #[arg(long, default_value_t = 200)]
    max_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline TOML config
    #[arg(long)]
    config: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(args) => {
            let corpus = corpus::ingest(&args.meta, &args.emb).context("ingest")?;
            corpus.export(&args.out).context("ingest")?;
            println!(
                "ingested {} samples (dim {}, {} languages) into {}",
                corpus.len(),
                corpus.dim(),
                corpus.language_vocab().len(),
                args.out.display()
            );
        }
        Command::Synth(args) => {
            let spec = SynthSpec::uniform(
                args.dim,
                args.k_true,
                args.concentration,
                args.n,
                args.outlier_fraction,
                args.length_log_mean,
                args.length_log_std,
                args.languages_per_component,
                args.seed,
            );
            let (corpus, truth) = synth::generate(&spec).context("synth")?;
            synth::export(&args.out, &corpus, &truth).context("synth")?;
            println!(
                "generated {} samples ({} outliers) into {}",
                corpus.len(),
                truth.iter().filter(|t| t.is_outlier).count(),
                args.out.display()
            );
        }
        Command::Cluster(args) => {
            let corpus = Corpus::load_store(&args.store).context("cluster")?;
            let model = if args.probe_fraction < 1.0 {
                let probe = corpus
                    .probe_subset(args.probe_fraction, seed::derive(args.seed, "cli-probe"))
                    .context("cluster")?;
                ClusterModel::fit(&probe, args.k, args.iters, args.seed)
                    .and_then(|m| m.reassigned(&corpus))
                    .context("cluster")?
            } else {
                ClusterModel::fit(&corpus, args.k, args.iters, args.seed).context("cluster")?
            };
            model.save(&args.out).context("cluster")?;
            println!(
                "fit k={} (objective {:.6}) -> {}",
                model.k(),
                model.objective_trace.last().copied().unwrap_or(f64::NAN),
                args.out.display()
            );
        }
        Command::SelectK(args) => {
            let corpus = Corpus::load_store(&args.store).context("select-k")?;
            let opts = SelectKOptions {
                k_range: (args.k_min..=args.k_max).step_by(args.k_step).collect(),
                strides: args.strides,
                hop_weights: args.hop_weights,
                t_scale: args.t_scale,
                lambda_shrink: args.lambda_shrink,
                min_members: 3,
                probe_fraction: args.probe_fraction,
                iters: args.iters,
                restarts: args.restarts,
                seed: args.seed,
            };
            let profile = resolution::select_k(&corpus, &opts).context("select-k")?;
            let mut csv = Vec::new();
            profile.write_csv(&mut csv)?;
            fs::write(&args.out, csv)?;
            let plot_path = sibling(&args.out, "_plot.csv");
            let mut plot = Vec::new();
            profile.write_plot_csv(&mut plot)?;
            fs::write(&plot_path, plot)?;
            println!("K* = {} -> {}", profile.k_star, args.out.display());
        }
        Command::Features(args) => {
            let corpus = Corpus::load_store(&args.store).context("features")?;
            let model = ClusterModel::load(&args.model, &corpus).context("features")?;
            let (f, w, s) = features::score_model(&model, &corpus).context("features")?;
            let mut csv = Vec::new();
            features::write_features_csv(&mut csv, &f, &s)?;
            fs::write(&args.out, csv)?;
            println!(
                "scored {} clusters (weights coh/size/len/ent = {:.3}/{:.3}/{:.3}/{:.3}) -> {}",
                f.k(),
                w.w[0],
                w.w[1],
                w.w[2],
                w.w[3],
                args.out.display()
            );
        }
        Command::Budget(args) => {
            let corpus = Corpus::load_store(&args.store).context("budget")?;
            let model = ClusterModel::load(&args.model, &corpus).context("budget")?;
            let (_, _, scores) = features::score_model(&model, &corpus).context("budget")?;
            let budget_vec =
                budget::allocate_with_temperature(&scores, args.temperature).context("budget")?;
            let mut csv = Vec::new();
            budget::write_budget_csv(&mut csv, &scores, &budget_vec)?;
            fs::write(&args.out, csv)?;
            let json_path = sibling(&args.out, ".json");
            fs::write(&json_path, serde_json::to_string_pretty(&budget_vec)?)?;
            println!("budget over {} clusters -> {}", budget_vec.r.len(), args.out.display());
        }
        Command::Mine(args) => {
            let corpus = Corpus::load_store(&args.store).context("mine")?;
            let model = ClusterModel::load(&args.model, &corpus).context("mine")?;
            let budget_vec: BudgetVector =
                serde_json::from_str(&fs::read_to_string(&args.budget)?).context("mine")?;
            let scorer = build_cli_scorer(args.offline_ratings, args.stub_rating)?;
            let texts = match args.texts {
                Some(path) => Some(load_texts_file(&path)?),
                None => None,
            };
            let cfg = MinerConfig {
                lambda: args.lambda,
                epsilon: args.epsilon,
                probe_size: args.probe_size,
                ..MinerConfig::default()
            };
            let records = miner::mine(
                &corpus,
                &model,
                &budget_vec,
                scorer.as_ref(),
                texts.as_ref(),
                &cfg,
                seed::derive(args.seed, "mine"),
            )
            .context("mine")?;
            fs::write(&args.out, serde_json::to_string_pretty(&records)?)?;
            let csv_path = sibling(&args.out, ".csv");
            let mut csv = Vec::new();
            miner::write_plan_csv(&mut csv, &records)?;
            fs::write(&csv_path, csv)?;
            println!("mined {} sub-clusters -> {}", records.len(), args.out.display());
        }
        Command::Sample(args) => {
            let corpus = Corpus::load_store(&args.store).context("sample")?;
            let records: Vec<SubClusterRecord> =
                serde_json::from_str(&fs::read_to_string(&args.records)?).context("sample")?;
            let plan = miner::realize_sample(
                &records,
                &corpus,
                args.token_budget,
                seed::derive(args.seed, "sample"),
            )
            .context("sample")?;
            let ids: String = plan.sampled_ids.iter().map(|id| format!("{id}\n")).collect();
            fs::write(&args.out, ids)?;
            println!(
                "sampled {} ids, {} / {} tokens -> {}",
                plan.sampled_ids.len(),
                plan.realized_tokens,
                plan.token_budget,
                args.out.display()
            );
        }
        Command::Evaluate(args) => {
            let corpus = Corpus::load_store(&args.store).context("evaluate")?;
            let model = ClusterModel::load(&args.model, &corpus).context("evaluate")?;
            let ids: Vec<u64> = fs::read_to_string(&args.ids)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.trim().parse::<u64>().context("parse id"))
                .collect::<Result<_>>()?;
            let report =
                pipeline::evaluate_selection(&corpus, &model, &ids, args.max_points, args.seed)
                    .context("evaluate")?;
            fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
            println!(
                "w2(selected, corpus subsample) = {:.6} -> {}",
                report.w2_selected_vs_corpus,
                args.out.display()
            );
        }
        Command::Run(args) => {
            let config = PipelineConfig::from_toml_file(&args.config).context("run")?;
            let artifacts = pipeline::run(&config, None).context("run")?;
            for (stage, reused) in &artifacts.reused {
                println!(
                    "stage {stage}: {}",
                    if *reused { "reused" } else { "computed" }
                );
            }
            if let Some(profile) = &artifacts.profile {
                println!("K* = {}", profile.k_star);
            }
            println!(
                "clusters = {}, sub-clusters = {}, sampled {} ids ({} / {} tokens)",
                artifacts.model.k(),
                artifacts.records.len(),
                artifacts.plan.sampled_ids.len(),
                artifacts.plan.realized_tokens,
                artifacts.plan.token_budget,
            );
            if let Some(eval) = &artifacts.evaluation {
                println!("w2(selected, corpus) = {:.6}", eval.w2_selected_vs_corpus);
            }
        }
        Command::ScorerPrompt => {
            print!("{PROBE_PROMPT}");
        }
    }
    Ok(())
}

fn sibling(path: &PathBuf, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn build_cli_scorer(
    offline: Option<PathBuf>,
    stub: Option<Vec<u8>>,
) -> Result<Box<dyn Scorer>> {
    if let Some(path) = offline {
        return Ok(Box::new(OfflineScorer::load(&path)?));
    }
    if let Some(rating) = stub {
        if rating.len() != 4 {
            bail!("--stub-rating needs exactly 4 values");
        }
        return Ok(Box::new(StubScorer::fixed(ProbeRating::new(
            rating[0], rating[1], rating[2], rating[3],
        ))));
    }
    match std::env::var(SCORER_URL_ENV) {
        Ok(url) => Ok(Box::new(HttpScorer::new(url))),
        Err(_) => bail!(
            "no scorer configured: pass --offline-ratings, --stub-rating, or set {SCORER_URL_ENV}"
        ),
    }
}

fn load_texts_file(path: &PathBuf) -> Result<std::collections::HashMap<u64, String>> {
    #[derive(serde::Deserialize)]
    struct Line {
        id: u64,
        content: String,
    }
    let mut map = std::collections::HashMap::new();
    for line in fs::read_to_string(path)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(line)?;
        map.insert(rec.id, rec.content);
    }
    Ok(map)
}
