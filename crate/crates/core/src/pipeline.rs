//! Pipeline orchestration: resumable, content-addressed stages.
//!
//! A run executes `select_k -> cluster -> features -> budget -> mine ->
//! sample -> evaluate` from one declarative config. Every stage's outputs
//! are addressed by a hash chained from the stage parameters and all
//! upstream hashes, so re-running with an unchanged config reuses artifacts
//! and a changed Stage-II knob (for example `lambda`) invalidates only
//! Stage-II and later outputs. All randomness fans out from the single
//! config seed through named substreams.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::budget::{self, BudgetVector};
use crate::cluster::ClusterModel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{self, ClusterFeatures, ConsensusWeights, GeometricScores};
use crate::miner::{self, Aggregation, MinerConfig, SelectionPlan, StatReference, SubClusterRecord};
use crate::resolution::{self, SelectKOptions, StabilityProfile};
use crate::scorer::{HttpScorer, OfflineScorer, ProbeRating, Scorer, StubScorer, SCORER_URL_ENV};
use crate::seed;
use crate::transport::{self, DecompositionReport, EmpiricalMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Learned budgets plus full micro-mining.
    Full,
    /// Uniform budgets `r_k = 1/K`; mining against global statistics.
    WoStage1,
    /// Learned budgets; uniform random sampling within clusters.
    WoStage2,
    /// Flat clustering at `K_total`, uniform ratio, random within clusters.
    ClusterRandom,
    /// Flat clustering at `K_total`, selected by micro-mining metrics.
    WoHierarchy,
}

impl AblationMode {
    pub fn is_flat(self) -> bool {
        matches!(self, AblationMode::ClusterRandom | AblationMode::WoHierarchy)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerConfig {
    /// Fixed rating for every probe.
    Stub { rating: [u8; 4] },
    /// Line-delimited JSON ratings keyed by sample id.
    Offline { path: PathBuf },
    /// POST `{"content": ...}` to a judge endpoint; url defaults to the
    /// `GEOMINE_SCORER_URL` environment variable.
    Http { url: Option<String> },
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig::Stub { rating: [4, 4, 4, 4] }
    }
}

fn default_probe_fraction() -> f64 {
    0.2
}
fn default_strides() -> Vec<usize> {
    vec![2, 4, 6]
}
fn default_hop_weights() -> Vec<f64> {
    vec![0.5, 0.3, 0.2]
}
fn default_t_scale() -> f64 {
    20.0
}
fn default_lambda_shrink() -> f64 {
    1.0
}
fn default_min_members() -> usize {
    3
}
fn default_stage1_iters() -> usize {
    10
}
fn default_restarts() -> usize {
    4
}
fn default_lambda() -> f64 {
    0.5
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_probe_size() -> usize {
    8
}
fn default_budget_temperature() -> f64 {
    1.0
}
fn default_ablation() -> AblationMode {
    AblationMode::Full
}
fn default_aggregation() -> Aggregation {
    Aggregation::Mean
}
fn default_k_step() -> usize {
    4
}
fn default_scorer_parallelism() -> usize {
    8
}
fn default_eval_max_points() -> usize {
    200
}

/// Declarative pipeline configuration (TOML on disk).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub store: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub token_budget: u64,

    pub k_min: usize,
    pub k_max: usize,
    #[serde(default = "default_k_step")]
    pub k_step: usize,

    #[serde(default = "default_probe_fraction")]
    pub probe_fraction: f64,
    #[serde(default = "default_strides")]
    pub strides: Vec<usize>,
    #[serde(default = "default_hop_weights")]
    pub hop_weights: Vec<f64>,
    #[serde(default = "default_t_scale")]
    pub t_scale: f64,
    #[serde(default = "default_lambda_shrink")]
    pub lambda_shrink: f64,
    #[serde(default = "default_min_members")]
    pub min_members: usize,
    #[serde(default = "default_stage1_iters")]
    pub stage1_iters: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,

    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
    #[serde(default = "default_budget_temperature")]
    pub budget_temperature: f64,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    #[serde(default = "default_scorer_parallelism")]
    pub scorer_parallelism: usize,

    #[serde(default = "default_ablation")]
    pub ablation: AblationMode,
    /// Cluster count for the flat modes; derived from a full structure pass
    /// when absent.
    #[serde(default)]
    pub k_total: Option<usize>,

    #[serde(default)]
    pub scorer: ScorerConfig,
    /// Optional JSONL `{"id", "content"}` lookup feeding remote scorers.
    #[serde(default)]
    pub texts: Option<PathBuf>,

    /// Emit a transport report over a subsampled instance after sampling.
    #[serde(default)]
    pub evaluate: bool,
    #[serde(default = "default_eval_max_points")]
    pub evaluate_max_points: usize,
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.to_string()))
            }
        };
        check(self.lambda >= 0.0, "lambda must be >= 0")?;
        check(self.epsilon > 0.0, "epsilon must be > 0")?;
        check(self.t_scale >= 0.0, "t_scale must be >= 0")?;
        check(
            self.probe_fraction > 0.0 && self.probe_fraction <= 1.0,
            "probe_fraction must be in (0, 1]",
        )?;
        check(self.k_min >= 1 && self.k_min <= self.k_max, "need 1 <= k_min <= k_max")?;
        check(self.k_step >= 1, "k_step must be >= 1")?;
        check(
            !self.strides.is_empty() && self.strides.len() == self.hop_weights.len(),
            "strides and hop_weights must be non-empty and equal length",
        )?;
        check(self.hop_weights.iter().all(|&w| w > 0.0), "hop_weights must be positive")?;
        check(self.token_budget >= 1, "token_budget must be >= 1")?;
        check(self.probe_size >= 1, "probe_size must be >= 1")?;
        check(self.budget_temperature > 0.0, "budget_temperature must be > 0")?;
        Ok(())
    }

    pub fn k_range(&self) -> Vec<usize> {
        (self.k_min..=self.k_max).step_by(self.k_step).collect()
    }

    fn build_scorer(&self) -> Result<Box<dyn Scorer>> {
        Ok(match &self.scorer {
            ScorerConfig::Stub { rating } => Box::new(StubScorer::fixed(ProbeRating::new(
                rating[0], rating[1], rating[2], rating[3],
            ))),
            ScorerConfig::Offline { path } => Box::new(OfflineScorer::load(path)?),
            ScorerConfig::Http { url } => {
                let url = match url {
                    Some(u) => u.clone(),
                    None => std::env::var(SCORER_URL_ENV).map_err(|_| {
                        Error::InvalidConfig(format!(
                            "http scorer needs a url or the {SCORER_URL_ENV} environment variable"
                        ))
                    })?,
                };
                Box::new(HttpScorer::new(url))
            }
        })
    }

    fn miner_config(&self) -> MinerConfig {
        MinerConfig {
            lambda: self.lambda,
            epsilon: self.epsilon,
            probe_size: self.probe_size,
            sigma_zero_cap: 16.0,
            aggregation: self.aggregation,
            reference: if self.ablation == AblationMode::WoStage1 {
                StatReference::Global
            } else {
                StatReference::Parent
            },
            scorer_parallelism: self.scorer_parallelism,
        }
    }
}

/// Transport report emitted by the evaluate stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Exact squared W2 between a corpus subsample and a selection subsample.
    pub w2_selected_vs_corpus: f64,
    pub decomposition: Option<DecompositionReport>,
    pub note: Option<String>,
}

/// Everything a run produces, in memory.
pub struct RunArtifacts {
    pub profile: Option<StabilityProfile>,
    pub k_used: usize,
    pub model: ClusterModel,
    pub features: ClusterFeatures,
    pub weights: ConsensusWeights,
    pub scores: GeometricScores,
    pub budget: BudgetVector,
    pub records: Vec<SubClusterRecord>,
    pub plan: SelectionPlan,
    pub evaluation: Option<EvaluationReport>,
    /// Stage name -> whether it was reused from existing artifacts.
    pub reused: BTreeMap<String, bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    stages: BTreeMap<String, StageEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageEntry {
    hash: String,
    files: Vec<String>,
}

struct StageStore {
    out_dir: PathBuf,
    manifest: Manifest,
    reused: BTreeMap<String, bool>,
}

impl StageStore {
    fn open(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let manifest_path = out_dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            serde_json::from_str(&text).unwrap_or_default()
        } else {
            Manifest::default()
        };
        Ok(StageStore {
            out_dir: out_dir.to_path_buf(),
            manifest,
            reused: BTreeMap::new(),
        })
    }

    fn is_current(&self, stage: &str, hash: &str) -> bool {
        match self.manifest.stages.get(stage) {
            Some(entry) if entry.hash == hash => entry
                .files
                .iter()
                .all(|f| self.out_dir.join(f).exists()),
            _ => false,
        }
    }

    fn commit(&mut self, stage: &str, hash: &str, files: &[&str]) -> Result<()> {
        self.manifest.stages.insert(
            stage.to_string(),
            StageEntry {
                hash: hash.to_string(),
                files: files.iter().map(|s| s.to_string()).collect(),
            },
        );
        let manifest_path = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Other(e.to_string()))?;
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }
}

fn chain_hash(prev: &str, stage: &str, params: &impl Serialize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prev.as_bytes());
    hasher.update(stage.as_bytes());
    hasher.update(serde_json::to_vec(params).expect("params serialize"));
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Other(format!("{}: {e}", path.display())))
}

/// Exclusive ownership of an output directory for the duration of a run.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join(".geomine.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::OutputLocked(path))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Load the optional id -> content lookup.
fn load_texts(path: &Path) -> Result<HashMap<u64, String>> {
    #[derive(Deserialize)]
    struct Line {
        id: u64,
        content: String,
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut map = HashMap::new();
    for (ix, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: ix + 1,
            reason: e.to_string(),
        })?;
        map.insert(rec.id, rec.content);
    }
    Ok(map)
}

/// Execute the pipeline; `scorer_override` replaces the configured scorer
/// (used by tests to inject ground-truth-aware stubs).
pub fn run(config: &PipelineConfig, scorer_override: Option<&dyn Scorer>) -> Result<RunArtifacts> {
    config.validate()?;
    let _lock = DirLock::acquire(&config.out_dir)?;
    let mut store = StageStore::open(&config.out_dir)?;

    let corpus = Corpus::load_store(&config.store).map_err(|e| e.in_stage("load-store"))?;

    // -------------------------------------------------- stage: select_k
    let needs_sweep = !(config.ablation.is_flat() && config.k_total.is_some());
    let sweep_params = (
        &config.probe_fraction,
        config.k_range(),
        &config.strides,
        &config.hop_weights,
        config.t_scale,
        config.lambda_shrink,
        config.min_members,
        config.stage1_iters,
        config.restarts,
        config.seed,
        needs_sweep,
    );
    let h_sweep = chain_hash("", "select_k", &sweep_params);
    let profile: Option<StabilityProfile> = if needs_sweep {
        if store.is_current("select_k", &h_sweep) {
            store.reused.insert("select_k".into(), true);
            Some(read_json(&store.path("profile.json"))?)
        } else {
            let opts = SelectKOptions {
                k_range: config.k_range(),
                strides: config.strides.clone(),
                hop_weights: config.hop_weights.clone(),
                t_scale: config.t_scale,
                lambda_shrink: config.lambda_shrink,
                min_members: config.min_members,
                probe_fraction: config.probe_fraction,
                iters: config.stage1_iters,
                restarts: config.restarts,
                seed: seed::derive(config.seed, "sweep"),
            };
            let profile =
                resolution::select_k(&corpus, &opts).map_err(|e| e.in_stage("select_k"))?;
            write_json(&store.path("profile.json"), &profile)?;
            let mut csv = Vec::new();
            profile.write_csv(&mut csv).map_err(|e| Error::io(store.path("profile.csv"), e))?;
            fs::write(store.path("profile.csv"), csv)
                .map_err(|e| Error::io(store.path("profile.csv"), e))?;
            let mut plot = Vec::new();
            profile
                .write_plot_csv(&mut plot)
                .map_err(|e| Error::io(store.path("profile_plot.csv"), e))?;
            fs::write(store.path("profile_plot.csv"), plot)
                .map_err(|e| Error::io(store.path("profile_plot.csv"), e))?;
            store.commit("select_k", &h_sweep, &["profile.json", "profile.csv", "profile_plot.csv"])?;
            store.reused.insert("select_k".into(), false);
            Some(profile)
        }
    } else {
        store.reused.insert("select_k".into(), true);
        None
    };

    // -------------------------------------------------- stage: cluster
    // Flat modes cluster at K_total; hierarchical modes cluster at K*.
    let k_structure = profile.as_ref().map(|p| p.k_star);
    let cluster_params = (&h_sweep, k_structure, config.ablation, config.k_total, config.restarts);
    let h_cluster = chain_hash(&h_sweep, "cluster", &cluster_params);
    let (model, k_used) = if store.is_current("cluster", &h_cluster) {
        store.reused.insert("cluster".into(), true);
        let meta: BTreeMap<String, usize> = read_json(&store.path("model_meta.json"))?;
        let model = ClusterModel::load(&store.path("model.bin"), &corpus)
            .map_err(|e| e.in_stage("cluster"))?;
        (model, meta["k_requested"])
    } else {
        let fit = |k: usize, label: &str| -> Result<ClusterModel> {
            let probe;
            let fit_corpus: &Corpus = if config.probe_fraction < 1.0 {
                probe = corpus
                    .probe_subset(config.probe_fraction, seed::derive(config.seed, "stage1-probe"))?;
                &probe
            } else {
                &corpus
            };
            let indices: Vec<usize> = (0..fit_corpus.len()).collect();
            let fitted = ClusterModel::fit_best(
                fit_corpus,
                &indices,
                k.min(fit_corpus.len()),
                config.stage1_iters,
                config.restarts,
                seed::derive(config.seed, label),
            )?;
            fitted.reassigned(&corpus)
        };
        let (model, k_requested) = if config.ablation.is_flat() {
            let k_total = match config.k_total {
                Some(k) => k,
                None => {
                    // K* times the mean sub-cluster count of a full structure pass.
                    let k_star = profile.as_ref().expect("sweep ran").k_star;
                    let structure = fit(k_star, "structure-fit")?;
                    let mean_sub: f64 = structure
                        .sizes
                        .iter()
                        .map(|&s| (s as f64).sqrt().floor().max(1.0))
                        .sum::<f64>()
                        / structure.k() as f64;
                    ((k_star as f64 * mean_sub).round() as usize).max(1)
                }
            };
            (fit(k_total, "flat-fit")?, k_total)
        } else {
            let k_star = profile.as_ref().expect("sweep ran").k_star;
            (fit(k_star, "stage1-fit")?, k_star)
        };
        model
            .save(&store.path("model.bin"))
            .map_err(|e| e.in_stage("cluster"))?;
        let meta: BTreeMap<String, usize> =
            [("k_requested".to_string(), k_requested), ("k".to_string(), model.k())]
                .into_iter()
                .collect();
        write_json(&store.path("model_meta.json"), &meta)?;
        store.commit("cluster", &h_cluster, &["model.bin", "model_meta.json"])?;
        store.reused.insert("cluster".into(), false);
        (model, k_requested)
    };

    // -------------------------------------------------- stage: features
    let h_features = chain_hash(&h_cluster, "features", &());
    let (features, weights, scores) = if store.is_current("features", &h_features) {
        store.reused.insert("features".into(), true);
        let (f, w, s): (ClusterFeatures, ConsensusWeights, GeometricScores) =
            read_json(&store.path("features.json"))?;
        (f, w, s)
    } else {
        let (f, w, s) = features::score_model(&model, &corpus).map_err(|e| e.in_stage("features"))?;
        write_json(&store.path("features.json"), &(&f, &w, &s))?;
        let mut csv = Vec::new();
        features::write_features_csv(&mut csv, &f, &s)
            .map_err(|e| Error::io(store.path("features.csv"), e))?;
        fs::write(store.path("features.csv"), csv)
            .map_err(|e| Error::io(store.path("features.csv"), e))?;
        store.commit("features", &h_features, &["features.json", "features.csv"])?;
        store.reused.insert("features".into(), false);
        (f, w, s)
    };

    // -------------------------------------------------- stage: budget
    let budget_params = (config.budget_temperature, config.ablation);
    let h_budget = chain_hash(&h_features, "budget", &budget_params);
    let budget_vec = if store.is_current("budget", &h_budget) {
        store.reused.insert("budget".into(), true);
        read_json::<BudgetVector>(&store.path("budget.json"))?
    } else {
        let b = match config.ablation {
            AblationMode::WoStage1 | AblationMode::ClusterRandom | AblationMode::WoHierarchy => {
                BudgetVector {
                    r: vec![1.0 / model.k() as f64; model.k()],
                }
            }
            AblationMode::Full | AblationMode::WoStage2 => {
                budget::allocate_with_temperature(&scores, config.budget_temperature)
                    .map_err(|e| e.in_stage("budget"))?
            }
        };
        write_json(&store.path("budget.json"), &b)?;
        let mut csv = Vec::new();
        budget::write_budget_csv(&mut csv, &scores, &b)
            .map_err(|e| Error::io(store.path("budget.csv"), e))?;
        fs::write(store.path("budget.csv"), csv)
            .map_err(|e| Error::io(store.path("budget.csv"), e))?;
        store.commit("budget", &h_budget, &["budget.json", "budget.csv"])?;
        store.reused.insert("budget".into(), false);
        b
    };

    // -------------------------------------------------- stage: mine
    let mine_params = (
        config.lambda,
        config.epsilon,
        config.probe_size,
        &config.aggregation,
        config.ablation,
        &config.scorer,
        &config.texts,
        config.seed,
    );
    let h_mine = chain_hash(&h_budget, "mine", &mine_params);
    let records = if store.is_current("mine", &h_mine) {
        store.reused.insert("mine".into(), true);
        read_json::<Vec<SubClusterRecord>>(&store.path("records.json"))?
    } else {
        let texts = match &config.texts {
            Some(path) => Some(load_texts(path).map_err(|e| e.in_stage("mine"))?),
            None => None,
        };
        let owned_scorer;
        let scorer: &dyn Scorer = match scorer_override {
            Some(s) => s,
            None => {
                owned_scorer = config.build_scorer().map_err(|e| e.in_stage("mine"))?;
                owned_scorer.as_ref()
            }
        };
        let cfg = config.miner_config();
        let mine_seed = seed::derive(config.seed, "mine");
        let recs = match config.ablation {
            AblationMode::Full | AblationMode::WoStage1 => miner::mine(
                &corpus,
                &model,
                &budget_vec,
                scorer,
                texts.as_ref(),
                &cfg,
                mine_seed,
            ),
            AblationMode::WoStage2 | AblationMode::ClusterRandom => {
                miner::records_from_clusters(&model, &budget_vec.r)
            }
            AblationMode::WoHierarchy => miner::mine_flat(
                &corpus,
                &model,
                &budget_vec,
                scorer,
                texts.as_ref(),
                &cfg,
                mine_seed,
            ),
        }
        .map_err(|e| e.in_stage("mine"))?;
        write_json(&store.path("records.json"), &recs)?;
        let mut csv = Vec::new();
        miner::write_plan_csv(&mut csv, &recs).map_err(|e| Error::io(store.path("plan.csv"), e))?;
        fs::write(store.path("plan.csv"), csv).map_err(|e| Error::io(store.path("plan.csv"), e))?;
        store.commit("mine", &h_mine, &["records.json", "plan.csv"])?;
        store.reused.insert("mine".into(), false);
        recs
    };

    // -------------------------------------------------- stage: sample
    let sample_params = (config.token_budget, config.seed);
    let h_sample = chain_hash(&h_mine, "sample", &sample_params);
    let plan = if store.is_current("sample", &h_sample) {
        store.reused.insert("sample".into(), true);
        read_json::<SelectionPlan>(&store.path("plan.json"))?
    } else {
        let plan = miner::realize_sample(
            &records,
            &corpus,
            config.token_budget,
            seed::derive(config.seed, "sample"),
        )
        .map_err(|e| e.in_stage("sample"))?;
        write_json(&store.path("plan.json"), &plan)?;
        let ids_text: String = plan
            .sampled_ids
            .iter()
            .map(|id| format!("{id}\n"))
            .collect();
        fs::write(store.path("sampled_ids.txt"), ids_text)
            .map_err(|e| Error::io(store.path("sampled_ids.txt"), e))?;
        store.commit("sample", &h_sample, &["plan.json", "sampled_ids.txt"])?;
        store.reused.insert("sample".into(), false);
        plan
    };

    // -------------------------------------------------- stage: evaluate
    let evaluation = if config.evaluate {
        let eval_params = (config.evaluate_max_points, config.seed);
        let h_eval = chain_hash(&h_sample, "evaluate", &eval_params);
        if store.is_current("evaluate", &h_eval) {
            store.reused.insert("evaluate".into(), true);
            Some(read_json::<EvaluationReport>(&store.path("transport_report.json"))?)
        } else {
            let report = evaluate_selection(
                &corpus,
                &model,
                &plan.sampled_ids,
                config.evaluate_max_points,
                seed::derive(config.seed, "evaluate"),
            )
            .map_err(|e| e.in_stage("evaluate"))?;
            write_json(&store.path("transport_report.json"), &report)?;
            store.commit("evaluate", &h_eval, &["transport_report.json"])?;
            store.reused.insert("evaluate".into(), false);
            Some(report)
        }
    } else {
        None
    };

    Ok(RunArtifacts {
        profile,
        k_used,
        model,
        features,
        weights,
        scores,
        budget: budget_vec,
        records,
        plan,
        evaluation,
        reused: store.reused,
    })
}

/// Transport check of a selection on a subsampled instance.
pub fn evaluate_selection(
    corpus: &Corpus,
    model: &ClusterModel,
    sampled_ids: &[u64],
    max_points: usize,
    seed_value: u64,
) -> Result<EvaluationReport> {
    let corpus_rows = subsample_rows(corpus.len(), max_points, seed_value, "eval-corpus");
    let reference = EmpiricalMeasure::from_corpus(corpus, &corpus_rows)?;

    let mut selected_rows: Vec<usize> = sampled_ids
        .iter()
        .filter_map(|&id| corpus.index_of(id))
        .collect();
    selected_rows.sort_unstable();
    let selected_rows = if selected_rows.len() > max_points {
        let keep = subsample_rows(selected_rows.len(), max_points, seed_value, "eval-selected");
        keep.into_iter().map(|i| selected_rows[i]).collect()
    } else {
        selected_rows
    };
    if selected_rows.is_empty() {
        return Err(Error::InvalidMeasure("selection is empty".into()));
    }
    let selected = EmpiricalMeasure::from_corpus(corpus, &selected_rows)?;

    let w2 = transport::w2_exact(&reference, &selected)?;
    let (decomposition, note) = match transport::decomposition(&reference, model, &selected) {
        Ok(report) => (Some(report), None),
        Err(e) => (None, Some(format!("decomposition unavailable: {e}"))),
    };
    Ok(EvaluationReport {
        w2_selected_vs_corpus: w2,
        decomposition,
        note,
    })
}

fn subsample_rows(n: usize, cap: usize, seed_value: u64, label: &str) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = seed::rng(seed_value, label);
    let mut rows: Vec<usize> = rand::seq::index::sample(&mut rng, n, cap).into_vec();
    rows.sort_unstable();
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn synth_store(dir: &Path, seed_value: u64) -> PathBuf {
        let spec = synth::SynthSpec::uniform(8, 4, 60.0, 600, 0.0, 4.0, 0.4, 1, seed_value);
        let (corpus, truth) = synth::generate(&spec).unwrap();
        let store = dir.join("store");
        synth::export(&store, &corpus, &truth).unwrap();
        store
    }

    fn base_config(store: PathBuf, out_dir: PathBuf) -> PipelineConfig {
        PipelineConfig {
            store,
            out_dir,
            seed: 11,
            token_budget: 12_000,
            k_min: 2,
            k_max: 6,
            k_step: 2,
            probe_fraction: 1.0,
            strides: vec![2, 4],
            hop_weights: vec![0.6, 0.4],
            t_scale: 20.0,
            lambda_shrink: 1.0,
            min_members: 3,
            stage1_iters: 10,
            restarts: 4,
            lambda: 0.5,
            epsilon: 0.01,
            probe_size: 4,
            budget_temperature: 1.0,
            aggregation: Aggregation::Mean,
            scorer_parallelism: 4,
            ablation: AblationMode::Full,
            k_total: None,
            scorer: ScorerConfig::default(),
            texts: None,
            evaluate: false,
            evaluate_max_points: 120,
        }
    }

    #[test]
    fn full_run_produces_consistent_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let store = synth_store(dir.path(), 3);
        let config = base_config(store, dir.path().join("out"));
        let run1 = run(&config, None).unwrap();
        assert!(run1.reused.values().all(|&r| !r));
        assert!(!run1.plan.sampled_ids.is_empty());
        let total_w: f64 = run1.records.iter().map(|r| r.weight).sum();
        assert!((total_w - 1.0).abs() < 1e-9);

        // second run reuses every stage and reproduces the sample
        let run2 = run(&config, None).unwrap();
        assert!(run2.reused.values().all(|&r| r), "{:?}", run2.reused);
        assert_eq!(run1.plan.sampled_ids, run2.plan.sampled_ids);
    }

    #[test]
    fn changed_lambda_invalidates_only_stage_two() {
        let dir = tempfile::tempdir().unwrap();
        let store = synth_store(dir.path(), 5);
        let mut config = base_config(store, dir.path().join("out"));
        run(&config, None).unwrap();
        config.lambda = 0.9;
        let second = run(&config, None).unwrap();
        assert_eq!(second.reused["select_k"], true);
        assert_eq!(second.reused["cluster"], true);
        assert_eq!(second.reused["features"], true);
        assert_eq!(second.reused["budget"], true);
        assert_eq!(second.reused["mine"], false);
        assert_eq!(second.reused["sample"], false);
    }

    #[test]
    fn wo_stage1_budget_is_exactly_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let store = synth_store(dir.path(), 7);
        let mut config = base_config(store, dir.path().join("out"));
        config.ablation = AblationMode::WoStage1;
        let artifacts = run(&config, None).unwrap();
        let k = artifacts.model.k();
        for &r in &artifacts.budget.r {
            assert_eq!(r, 1.0 / k as f64);
        }
    }

    #[test]
    fn wo_stage2_records_are_clusters_with_budget_weights() {
        let dir = tempfile::tempdir().unwrap();
        let store = synth_store(dir.path(), 9);
        let mut config = base_config(store, dir.path().join("out"));
        config.ablation = AblationMode::WoStage2;
        let artifacts = run(&config, None).unwrap();
        assert_eq!(artifacts.records.len(), artifacts.model.k());
        for (rec, &r) in artifacts.records.iter().zip(&artifacts.budget.r) {
            assert_eq!(rec.weight, r);
            assert!(!rec.scored);
        }
    }

    #[test]
    fn flat_modes_use_k_total() {
        let dir = tempfile::tempdir().unwrap();
        let store = synth_store(dir.path(), 13);
        let mut config = base_config(store, dir.path().join("out"));
        config.ablation = AblationMode::ClusterRandom;
        config.k_total = Some(9);
        let artifacts = run(&config, None).unwrap();
        assert!(artifacts.profile.is_none());
        assert_eq!(artifacts.k_used, 9);
        // uniform ratio per cluster
        for &r in &artifacts.budget.r {
            assert_eq!(r, 1.0 / artifacts.model.k() as f64);
        }
    }

    #[test]
    fn lock_excludes_concurrent_runs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let _lock = DirLock::acquire(&out).unwrap();
        assert!(matches!(DirLock::acquire(&out), Err(Error::OutputLocked(_))));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
store = "store"
out_dir = "out"
seed = 5
token_budget = 1000
k_min = 4
k_max = 12
k_step = 4
lambda = 0.5

[scorer]
kind = "stub"
rating = [4, 4, 4, 4]
"#;
        let path = dir.path().join("config.toml");
        std::fs::write(&path, text).unwrap();
        let config = PipelineConfig::from_toml_file(&path).unwrap();
        assert_eq!(config.k_range(), vec![4, 8, 12]);
        assert_eq!(config.t_scale, 20.0);
        assert_eq!(config.epsilon, 0.01);

        // unknown keys fail fast
        let bad = format!("{text}\nnot_a_key = 1\n");
        std::fs::write(&path, bad).unwrap();
        assert!(PipelineConfig::from_toml_file(&path).is_err());
    }
}
