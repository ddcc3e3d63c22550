//! Command-line entry point: subcommands for each stage plus a config-driven
//! pipeline runner with a hashed artifact manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis;
use crate::error::{Error, Result};
use crate::factdist;
use crate::kb::{self, CrpConfig, TripleFormat, TripleStore};
use crate::kge::{self, KgeModel, NegSampler, NegSamplerConfig, RankingReport};
use crate::margin;
use crate::redundancy::{self, PairLabels, PrConfig, SampleMode};
use crate::similarity::{self, SimilarityMatrix};

#[derive(Parser, Debug)]
#[command(name = "relsim", version, about = "Relation similarity from learned fact distributions")]
pub struct Cli {
    /// Worker threads for intra-stage parallelism. Results never depend on
    /// this value; the current implementation runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Knowledge-base loading, splitting, and CRP sub-relation synthesis
    Data {
        #[command(subcommand)]
        cmd: DataCmd,
    },
    /// Fact-distribution model training and sampling
    Factdist {
        #[command(subcommand)]
        cmd: FactdistCmd,
    },
    /// Relation similarity matrices
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Baseline embedding models (TransE / DistMult)
    Kge {
        #[command(subcommand)]
        cmd: KgeCmd,
    },
    /// Redundancy detection and precision/recall estimation
    Redun {
        #[command(subcommand)]
        cmd: RedunCmd,
    },
    /// Human-judgment correlation and ranking error analysis
    Analyze {
        #[command(subcommand)]
        cmd: AnalyzeCmd,
    },
    /// Softmax-margin classifier training
    Margin {
        #[command(subcommand)]
        cmd: MarginCmd,
    },
    /// Config-driven multi-stage runs
    Pipeline {
        #[command(subcommand)]
        cmd: PipelineCmd,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Tsv,
    ReverbTsv,
}

impl From<FormatArg> for TripleFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tsv => TripleFormat::Tsv,
            FormatArg::ReverbTsv => TripleFormat::ReverbTsv,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum DataCmd {
    /// Parse a triple file into a store directory
    Load {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a store into train/validation with coverage repair
    Split {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        valid_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        valid_out: PathBuf,
    },
    /// Split relations into CRP sub-relations with ground truth
    Crp {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 20)]
        min_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth_out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum FactdistCmd {
    /// Fit P(h,t|r) on a train/validation pair
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 512)]
        batch_size: usize,
        #[arg(long, default_value_t = 200)]
        max_epochs: usize,
        #[arg(long, default_value_t = 5)]
        patience: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TransE checkpoint whose embeddings seed the tables
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Draw (head, tail) pairs from a trained distribution
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        relation: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum SimCmd {
    /// Full similarity matrix from a fact-distribution checkpoint
    Matrix {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = similarity::DEFAULT_MC_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Similarity of one relation pair, printed as JSON
    Pair {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        r1: String,
        #[arg(long)]
        r2: String,
    },
    /// Export a matrix as CSV
    Export {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NegModeArg {
    Uniform,
    Similarity,
    TypedMixture,
    TypedWeight,
}

#[derive(Subcommand, Debug)]
pub enum KgeCmd {
    /// Train a TransE/DistMult baseline
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = KgeModelArg::Transe)]
        model: KgeModelArg,
        #[arg(long, default_value_t = 50)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        margin: f64,
        #[arg(long, default_value_t = 0.01)]
        learning_rate: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = NegModeArg::Uniform)]
        negative_mode: NegModeArg,
        /// Similarity matrix directory (similarity negative mode)
        #[arg(long)]
        sim: Option<PathBuf>,
        #[arg(long, default_value_t = 8192.0)]
        temperature_init: f64,
        #[arg(long, default_value_t = 200)]
        halve_every: usize,
        #[arg(long, default_value_t = 16.0)]
        temperature_floor: f64,
    },
    /// Filtered relation-prediction ranking
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Store holding every known fact (for filtering)
        #[arg(long)]
        all: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KgeModelArg {
    Transe,
    Distmult,
}

#[derive(Subcommand, Debug)]
pub enum RedunCmd {
    /// Threshold merge of similar relations
    Merge {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw an annotation batch CSV
    Sample {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long, value_enum, default_value_t = SampleModeArg::Proposal)]
        mode: SampleModeArg,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision-recall curve from labeled pairs
    Pr {
        #[arg(long)]
        sim: PathBuf,
        /// Filled annotation CSV (see `redun sample`)
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.3, 0.5, 0.7, 0.9])]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 500)]
        recall_samples: usize,
        #[arg(long, default_value_t = 100)]
        precision_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SampleModeArg {
    Proposal,
    PerThreshold,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCmd {
    /// Correlate a similarity matrix with human judgments
    Human {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        #[arg(long, default_value_t = analysis::DEFAULT_PERMUTATION_SHUFFLES)]
        shuffles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Distracting-relation similarity-rank histogram
    Errors {
        /// RankingReport JSON (see `kge eval`)
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum MarginCmd {
    /// Train the toy softmax-margin classifier on frozen features
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        /// Fact-distribution checkpoint supplying entity embeddings
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        #[arg(long, default_value_t = 9.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum PipelineCmd {
    /// Run stages from a JSON config into a run directory
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Data,
    Factdist,
    Sim,
    Kge,
    Redun,
    Analyze,
    Margin,
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataStageConfig,
    #[serde(default)]
    pub factdist: factdist::TrainConfig,
    #[serde(default)]
    pub sim: SimStageConfig,
    #[serde(default)]
    pub kge: kge::KgeConfig,
    #[serde(default)]
    pub kge_negative: NegSamplerConfig,
    #[serde(default)]
    pub redun: RedunStageConfig,
    #[serde(default)]
    pub analyze: AnalyzeStageConfig,
    #[serde(default)]
    pub margin: margin::MarginTrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataStageConfig {
    pub input: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    #[serde(default)]
    pub crp: Option<CrpStageConfig>,
}

fn default_format() -> String {
    "tsv".into()
}

fn default_valid_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrpStageConfig {
    pub alpha: f64,
    pub min_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimStageConfig {
    pub samples: usize,
}

impl Default for SimStageConfig {
    fn default() -> Self {
        Self { samples: similarity::DEFAULT_MC_SAMPLES }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RedunStageConfig {
    pub lambda: f64,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub pr: PrConfig,
}

fn default_thresholds() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

impl Default for RedunStageConfig {
    fn default() -> Self {
        Self { lambda: 0.5, labels: None, thresholds: default_thresholds(), pr: PrConfig::default() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnalyzeStageConfig {
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    #[serde(default = "default_shuffles")]
    pub shuffles: usize,
}

fn default_shuffles() -> usize {
    analysis::DEFAULT_PERMUTATION_SHUFFLES
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Ok(seed) = std::env::var("RELSIM_SEED") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| Error::Config(format!("RELSIM_SEED is not an integer: '{seed}'")))?;
            config.override_seed(seed);
        }
        config.validate()?;
        Ok(config)
    }

    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if !self.data.input.exists() {
            return Err(Error::Config(format!(
                "data.input: path {} does not exist",
                self.data.input.display()
            )));
        }
        self.data.format.parse::<TripleFormat>().map_err(|e| {
            Error::Config(format!("data.format: {e}"))
        })?;
        if !(self.data.valid_fraction > 0.0 && self.data.valid_fraction < 1.0) {
            return Err(Error::Config("data.valid_fraction: must be in (0,1)".into()));
        }
        self.factdist.validate().map_err(|e| Error::Config(format!("factdist: {e}")))?;
        self.kge.validate().map_err(|e| Error::Config(format!("kge: {e}")))?;
        self.kge_negative.validate().map_err(|e| Error::Config(format!("kge_negative: {e}")))?;
        self.margin.validate().map_err(|e| Error::Config(format!("margin: {e}")))?;
        if let Some(labels) = &self.redun.labels {
            if !labels.exists() {
                return Err(Error::Config(format!(
                    "redun.labels: path {} does not exist",
                    labels.display()
                )));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn load_sim(dir: &Path) -> Result<SimilarityMatrix> {
    if !dir.join("manifest.json").exists() {
        return Err(Error::MissingArtifact(format!(
            "similarity matrix not found at {}",
            dir.display()
        )));
    }
    SimilarityMatrix::load(dir)
}

fn load_store(dir: &Path) -> Result<TripleStore> {
    if !dir.join("manifest.json").exists() {
        return Err(Error::MissingArtifact(format!("store not found at {}", dir.display())));
    }
    TripleStore::load(dir)
}

fn load_labels(path: &Path, sim: &SimilarityMatrix) -> Result<PairLabels> {
    let text = fs::read_to_string(path)?;
    let samples = redundancy::parse_annotation_csv(&text, sim)?;
    let mut labels = PairLabels::new();
    for s in samples {
        labels.insert(s.pair, s.label);
    }
    Ok(labels)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Data { cmd } => run_data(cmd),
        Command::Factdist { cmd } => run_factdist(cmd),
        Command::Sim { cmd } => run_sim(cmd),
        Command::Kge { cmd } => run_kge(cmd),
        Command::Redun { cmd } => run_redun(cmd),
        Command::Analyze { cmd } => run_analyze(cmd),
        Command::Margin { cmd } => run_margin(cmd),
        Command::Pipeline { cmd } => run_pipeline_cmd(cmd),
    }
}

fn run_data(cmd: DataCmd) -> Result<()> {
    match cmd {
        DataCmd::Load { input, format, out } => {
            let store = kb::load_triples(&input, format.into())?;
            store.save(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "triples": store.len(),
                    "entities": store.num_entities(),
                    "relations": store.num_relations(),
                    "out": out,
                })
            );
            Ok(())
        }
        DataCmd::Split { store, valid_fraction, seed, train_out, valid_out } => {
            let store = load_store(&store)?;
            let split = kb::split_validation(&store, valid_fraction, seed)?;
            split.train.save(&train_out)?;
            split.valid.save(&valid_out)?;
            println!(
                "{}",
                serde_json::json!({
                    "train": split.train.len(),
                    "valid": split.valid.len(),
                    "undersized": split.undersized,
                })
            );
            Ok(())
        }
        DataCmd::Crp { store, alpha, min_count, seed, out, truth_out } => {
            let store = load_store(&store)?;
            let cfg = CrpConfig { alpha, min_count, seed };
            let (split, truth) = kb::crp_split(&store, &cfg)?;
            split.save(&out)?;
            write_json(&truth_out, &truth)?;
            println!(
                "{}",
                serde_json::json!({
                    "sub_relations": split.num_relations(),
                    "triples": split.len(),
                })
            );
            Ok(())
        }
    }
}

fn run_factdist(cmd: FactdistCmd) -> Result<()> {
    match cmd {
        FactdistCmd::Train {
            train,
            valid,
            out,
            dim,
            hidden,
            learning_rate,
            batch_size,
            max_epochs,
            patience,
            seed,
            pretrained,
        } => {
            let train_store = load_store(&train)?;
            let valid_store = load_store(&valid)?;
            let config = factdist::TrainConfig {
                embedding_dim: dim,
                hidden_dim: hidden,
                learning_rate,
                batch_size,
                max_epochs,
                patience,
                seed,
                pretrained_init: pretrained,
                ..factdist::TrainConfig::default()
            };
            let params = factdist::train(&train_store, &valid_store, &config)?;
            factdist::save_checkpoint(&params, &out)?;
            let nll = factdist::mean_nll(&params, valid_store.triples())?;
            println!("{}", serde_json::json!({ "valid_nll": nll, "out": out }));
            Ok(())
        }
        FactdistCmd::Sample { checkpoint, store, relation, n, seed, out } => {
            let params = factdist::load_checkpoint(&checkpoint)?;
            let store = load_store(&store)?;
            let r = store.relation_id(&relation).ok_or_else(|| {
                Error::MissingArtifact(format!("relation '{relation}' not in the store"))
            })?;
            let pairs = factdist::sample_pairs(&params, r, n, seed)?;
            let mut csv = String::from("head,tail\n");
            for (h, t) in pairs {
                csv.push_str(&format!(
                    "{},{}\n",
                    store.entity_names()[h as usize],
                    store.entity_names()[t as usize]
                ));
            }
            write_text(&out, &csv)?;
            Ok(())
        }
    }
}

fn run_sim(cmd: SimCmd) -> Result<()> {
    match cmd {
        SimCmd::Matrix { checkpoint, store, samples, seed, out } => {
            let params = factdist::load_checkpoint(&checkpoint)?;
            let store = load_store(&store)?;
            let matrix = similarity::similarity_matrix(
                &params,
                store.relation_names(),
                samples,
                seed,
                &checkpoint.display().to_string(),
            )?;
            matrix.save(&out)?;
            println!("{}", serde_json::json!({ "relations": matrix.num_relations(), "out": out }));
            Ok(())
        }
        SimCmd::Pair { sim, r1, r2 } => {
            let m = load_sim(&sim)?;
            let a = m.relation_id(&r1).ok_or_else(|| {
                Error::MissingArtifact(format!("relation '{r1}' not in the matrix"))
            })?;
            let b = m.relation_id(&r2).ok_or_else(|| {
                Error::MissingArtifact(format!("relation '{r2}' not in the matrix"))
            })?;
            println!(
                "{}",
                serde_json::json!({ "r1": r1, "r2": r2, "similarity": m.get(a, b) })
            );
            Ok(())
        }
        SimCmd::Export { sim, out } => {
            let m = load_sim(&sim)?;
            write_text(&out, &m.to_csv())
        }
    }
}

fn run_kge(cmd: KgeCmd) -> Result<()> {
    match cmd {
        KgeCmd::Train {
            train,
            out,
            model,
            dim,
            margin: gamma,
            learning_rate,
            epochs,
            seed,
            negative_mode,
            sim,
            temperature_init,
            halve_every,
            temperature_floor,
        } => {
            let store = load_store(&train)?;
            let config = kge::KgeConfig {
                kind: match model {
                    KgeModelArg::Transe => kge::KgeKind::TransE,
                    KgeModelArg::Distmult => kge::KgeKind::DistMult,
                },
                dim,
                margin: gamma,
                learning_rate,
                epochs,
                seed,
                negative_mode: match negative_mode {
                    NegModeArg::Uniform => kge::NegativeMode::Uniform,
                    NegModeArg::Similarity => kge::NegativeMode::Similarity,
                    NegModeArg::TypedMixture => kge::NegativeMode::TypedMixture,
                    NegModeArg::TypedWeight => kge::NegativeMode::TypedWeight,
                },
                ..kge::KgeConfig::default()
            };
            let sim_matrix = sim.as_deref().map(load_sim).transpose()?;
            let neg_cfg = NegSamplerConfig {
                temperature_init,
                halve_every,
                temperature_floor,
            };
            let sampler = build_sampler(&config, sim_matrix.as_ref(), neg_cfg, &store)?;
            let trained = kge::train_kge(&store, &config, &sampler)?;
            trained.save(&out)?;
            println!("{}", serde_json::json!({ "out": out }));
            Ok(())
        }
        KgeCmd::Eval { model, test, all, out } => {
            let model = KgeModel::load(&model)?;
            let test = load_store(&test)?;
            let all = load_store(&all)?;
            let report = kge::filtered_relation_ranking(&model, &all, &test)?;
            write_json(&out, &report)?;
            println!(
                "{}",
                serde_json::json!({
                    "mrr": report.mrr,
                    "hits1": report.hits1,
                    "hits3": report.hits3,
                    "out": out,
                })
            );
            Ok(())
        }
    }
}

fn build_sampler<'a>(
    config: &kge::KgeConfig,
    sim: Option<&'a SimilarityMatrix>,
    neg_cfg: NegSamplerConfig,
    store: &TripleStore,
) -> Result<NegSampler<'a>> {
    match config.negative_mode {
        kge::NegativeMode::Uniform => Ok(NegSampler::Uniform),
        kge::NegativeMode::Similarity => {
            let sim = sim.ok_or_else(|| {
                Error::MissingArtifact(
                    "similarity negative mode requires --sim DIR (run `relsim sim matrix` first)"
                        .into(),
                )
            })?;
            if sim.num_relations() != store.num_relations() {
                return Err(Error::Config(
                    "similarity matrix does not cover the training relation vocabulary".into(),
                ));
            }
            Ok(NegSampler::Similarity { sim, cfg: neg_cfg })
        }
        kge::NegativeMode::TypedMixture | kge::NegativeMode::TypedWeight => {
            let types = kge::types_from_relation_names(store.relation_names());
            let variant = if config.negative_mode == kge::NegativeMode::TypedMixture {
                kge::TypedVariant::Mixture
            } else {
                kge::TypedVariant::Weight
            };
            Ok(NegSampler::Typed { cfg: kge::TypedSamplerConfig::new(types), variant })
        }
    }
}

fn run_redun(cmd: RedunCmd) -> Result<()> {
    match cmd {
        RedunCmd::Merge { sim, lambda, out } => {
            let m = load_sim(&sim)?;
            let result = redundancy::merge_relations(&m, lambda)?;
            let named_clusters: Vec<Vec<&str>> = result
                .clusters
                .iter()
                .map(|c| c.iter().map(|&r| m.relation_names[r as usize].as_str()).collect())
                .collect();
            let payload = serde_json::json!({
                "lambda": lambda,
                "pairs": result.pairs,
                "clusters": named_clusters,
            });
            if let Some(out) = out {
                write_json(&out, &payload)?;
            }
            println!("{payload}");
            Ok(())
        }
        RedunCmd::Sample { sim, mode, n, thresholds, seed, out } => {
            let m = load_sim(&sim)?;
            let mode = match mode {
                SampleModeArg::Proposal => SampleMode::Proposal,
                SampleModeArg::PerThreshold => SampleMode::PerThreshold,
            };
            let csv = redundancy::sample_annotation_batch(&m, mode, n, &thresholds, seed)?;
            write_text(&out, &csv)
        }
        RedunCmd::Pr {
            sim,
            labels,
            thresholds,
            bootstrap,
            recall_samples,
            precision_samples,
            seed,
            out,
        } => {
            let m = load_sim(&sim)?;
            let labels = load_labels(&labels, &m)?;
            let cfg = PrConfig { recall_samples, precision_samples, bootstrap_n: bootstrap, seed };
            let curve = redundancy::pr_curve(&m, &labels, &thresholds, &cfg)?;
            write_text(&out, &curve.to_csv())?;
            println!("{}", serde_json::to_string(&curve)?);
            Ok(())
        }
    }
}

fn run_analyze(cmd: AnalyzeCmd) -> Result<()> {
    match cmd {
        AnalyzeCmd::Human { annotations, sim, shuffles, seed } => {
            let m = load_sim(&sim)?;
            let text = fs::read_to_string(&annotations)?;
            let table = analysis::AnnotationTable::from_csv(&text)?;
            let rho = analysis::model_human_correlation(&table, &m)?;
            let human = table.mean_scores();
            let model: Vec<f64> = table
                .pair_names
                .iter()
                .map(|(a, b)| {
                    m.get(m.relation_id(a).unwrap(), m.relation_id(b).unwrap())
                })
                .collect();
            let p = analysis::permutation_pvalue(&human, &model, shuffles, seed)?;
            let loo = analysis::loo_agreement(&table).ok();
            println!(
                "{}",
                serde_json::json!({
                    "spearman": rho,
                    "p_value": p,
                    "loo": loo,
                })
            );
            Ok(())
        }
        AnalyzeCmd::Errors { report, sim, out } => {
            let m = load_sim(&sim)?;
            let report: RankingReport =
                serde_json::from_str(&fs::read_to_string(&report)?)?;
            let hist = analysis::distracting_rank_histogram(&report, &m)?;
            write_text(&out, &hist.to_csv())?;
            println!(
                "{}",
                serde_json::json!({
                    "total_distractors": hist.total_distractors(),
                    "top3_mass": hist.window_mass(1, 3),
                    "out": out,
                })
            );
            Ok(())
        }
    }
}

fn run_margin(cmd: MarginCmd) -> Result<()> {
    match cmd {
        MarginCmd::Train {
            train,
            valid,
            features,
            sim,
            alpha,
            learning_rate,
            epochs,
            seed,
            out,
        } => {
            let train_store = load_store(&train)?;
            let valid_store = load_store(&valid)?;
            let m = load_sim(&sim)?;
            if !features.join("manifest.json").exists() {
                return Err(Error::MissingArtifact(format!(
                    "feature checkpoint not found at {}",
                    features.display()
                )));
            }
            let (entity_emb, _) = factdist::load_embedding_tables(&features)?;
            let config = margin::MarginTrainConfig {
                learning_rate,
                epochs,
                seed,
                alpha,
                schedule: margin::MarginSchedule::default(),
            };
            let (_, report) =
                margin::train_toy_classifier(&train_store, &valid_store, &entity_emb, &m, &config)?;
            write_json(&out, &report)?;
            println!("{}", serde_json::json!({ "accuracy": report.accuracy, "out": out }));
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FileEntry {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    config_hash: String,
    seed: u64,
    stages: Vec<Stage>,
    format_versions: BTreeMap<String, u32>,
    files: Vec<FileEntry>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != "manifest-run.json") {
            let bytes = fs::read(&path)?;
            out.push(FileEntry {
                name: path.strip_prefix(root).unwrap().display().to_string(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
    }
    Ok(())
}

fn run_pipeline_cmd(cmd: PipelineCmd) -> Result<()> {
    let PipelineCmd::Run { config, stages, out } = cmd;
    let config = RunConfig::load(&config)?;
    let stages = if stages.is_empty() {
        vec![Stage::Data, Stage::Factdist, Stage::Sim, Stage::Kge, Stage::Redun, Stage::Analyze, Stage::Margin]
    } else {
        stages
    };
    run_pipeline(&config, &stages, &out)
}

/// Execute the requested stages in order under `run_dir`, then write a run
/// manifest recording the config hash and a content hash of every artifact.
pub fn run_pipeline(config: &RunConfig, stages: &[Stage], run_dir: &Path) -> Result<()> {
    fs::create_dir_all(run_dir)?;
    for &stage in stages {
        match stage {
            Stage::Data => stage_data(config, run_dir)?,
            Stage::Factdist => stage_factdist(config, run_dir)?,
            Stage::Sim => stage_sim(config, run_dir)?,
            Stage::Kge => stage_kge(config, run_dir)?,
            Stage::Redun => stage_redun(config, run_dir)?,
            Stage::Analyze => stage_analyze(config, run_dir)?,
            Stage::Margin => stage_margin(config, run_dir)?,
        }
    }
    let mut files = Vec::new();
    collect_files(run_dir, run_dir, &mut files)?;
    let manifest = RunManifest {
        config_hash: config.hash(),
        seed: config.seed,
        stages: stages.to_vec(),
        format_versions: [
            ("store".to_string(), kb::STORE_FORMAT_VERSION),
            ("factdist".to_string(), factdist::CHECKPOINT_FORMAT_VERSION),
            ("similarity".to_string(), similarity::SIM_FORMAT_VERSION),
            ("kge".to_string(), kge::KGE_FORMAT_VERSION),
        ]
        .into_iter()
        .collect(),
        files,
    };
    write_json(&run_dir.join("manifest-run.json"), &manifest)?;
    Ok(())
}

fn require(path: PathBuf, what: &str, produced_by: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(format!(
            "{what} missing at {} (run the {produced_by} stage first)",
            path.display()
        )))
    }
}

fn stage_data(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let format: TripleFormat = config.data.format.parse()?;
    let store = kb::load_triples(&config.data.input, format)?;
    let store = if let Some(crp) = &config.data.crp {
        let cfg = CrpConfig { alpha: crp.alpha, min_count: crp.min_count, seed: config.seed };
        let (split, truth) = kb::crp_split(&store, &cfg)?;
        write_json(&run_dir.join("data/crp-truth.json"), &truth)?;
        split
    } else {
        store
    };
    store.save(&run_dir.join("data/store"))?;
    let split = kb::split_validation(&store, config.data.valid_fraction, config.seed)?;
    split.train.save(&run_dir.join("data/train"))?;
    split.valid.save(&run_dir.join("data/valid"))?;
    Ok(())
}

fn stage_factdist(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let train = load_store(&require(run_dir.join("data/train"), "training store", "data")?)?;
    let valid = load_store(&require(run_dir.join("data/valid"), "validation store", "data")?)?;
    let mut cfg = config.factdist.clone();
    cfg.seed = config.seed;
    let params = factdist::train(&train, &valid, &cfg)?;
    factdist::save_checkpoint(&params, &run_dir.join("factdist"))?;
    Ok(())
}

fn stage_sim(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let ckpt = require(run_dir.join("factdist"), "fact-distribution checkpoint", "factdist")?;
    let params = factdist::load_checkpoint(&ckpt)?;
    let store = load_store(&require(run_dir.join("data/store"), "store", "data")?)?;
    let matrix = similarity::similarity_matrix(
        &params,
        store.relation_names(),
        config.sim.samples,
        config.seed,
        "factdist",
    )?;
    matrix.save(&run_dir.join("sim"))?;
    Ok(())
}

fn stage_kge(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let train = load_store(&require(run_dir.join("data/train"), "training store", "data")?)?;
    let valid = load_store(&require(run_dir.join("data/valid"), "validation store", "data")?)?;
    let all = load_store(&require(run_dir.join("data/store"), "store", "data")?)?;
    let mut cfg = config.kge.clone();
    cfg.seed = config.seed;
    let sim = if cfg.negative_mode == kge::NegativeMode::Similarity {
        Some(load_sim(&require(run_dir.join("sim"), "similarity matrix", "sim")?)?)
    } else {
        None
    };
    let sampler = build_sampler(&cfg, sim.as_ref(), config.kge_negative.clone(), &train)?;
    let model = kge::train_kge(&train, &cfg, &sampler)?;
    model.save(&run_dir.join("kge"))?;
    let report = kge::filtered_relation_ranking(&model, &all, &valid)?;
    write_json(&run_dir.join("kge/report.json"), &report)?;
    Ok(())
}

fn stage_redun(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let m = load_sim(&require(run_dir.join("sim"), "similarity matrix", "sim")?)?;
    let result = redundancy::merge_relations(&m, config.redun.lambda)?;
    let named: Vec<Vec<&str>> = result
        .clusters
        .iter()
        .map(|c| c.iter().map(|&r| m.relation_names[r as usize].as_str()).collect())
        .collect();
    write_json(
        &run_dir.join("redun/merge.json"),
        &serde_json::json!({
            "lambda": result.threshold,
            "pairs": result.pairs,
            "clusters": named,
        }),
    )?;
    if let Some(labels_path) = &config.redun.labels {
        let labels = load_labels(labels_path, &m)?;
        let mut pr_cfg = config.redun.pr.clone();
        pr_cfg.seed = config.seed;
        let curve = redundancy::pr_curve(&m, &labels, &config.redun.thresholds, &pr_cfg)?;
        write_text(&run_dir.join("redun/pr.csv"), &curve.to_csv())?;
    }
    Ok(())
}

fn stage_analyze(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let m = load_sim(&require(run_dir.join("sim"), "similarity matrix", "sim")?)?;
    let report_path = require(run_dir.join("kge/report.json"), "ranking report", "kge")?;
    let report: RankingReport = serde_json::from_str(&fs::read_to_string(report_path)?)?;
    let hist = analysis::distracting_rank_histogram(&report, &m)?;
    write_text(&run_dir.join("analyze/distracting-ranks.csv"), &hist.to_csv())?;
    if let Some(annotations) = &config.analyze.annotations {
        let table = analysis::AnnotationTable::from_csv(&fs::read_to_string(annotations)?)?;
        let rho = analysis::model_human_correlation(&table, &m)?;
        let human = table.mean_scores();
        let model_scores: Vec<f64> = table
            .pair_names
            .iter()
            .map(|(a, b)| m.get(m.relation_id(a).unwrap(), m.relation_id(b).unwrap()))
            .collect();
        let p = analysis::permutation_pvalue(&human, &model_scores, config.analyze.shuffles, config.seed)?;
        write_json(
            &run_dir.join("analyze/human.json"),
            &serde_json::json!({
                "spearman": rho,
                "p_value": p,
                "loo": analysis::loo_agreement(&table).ok(),
            }),
        )?;
    }
    Ok(())
}

fn stage_margin(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let train = load_store(&require(run_dir.join("data/train"), "training store", "data")?)?;
    let valid = load_store(&require(run_dir.join("data/valid"), "validation store", "data")?)?;
    let m = load_sim(&require(run_dir.join("sim"), "similarity matrix", "sim")?)?;
    let ckpt = require(run_dir.join("factdist"), "fact-distribution checkpoint", "factdist")?;
    let (entity_emb, _) = factdist::load_embedding_tables(&ckpt)?;
    let mut cfg = config.margin.clone();
    cfg.seed = config.seed;
    let (_, report) = margin::train_toy_classifier(&train, &valid, &entity_emb, &m, &cfg)?;
    write_json(&run_dir.join("margin/report.json"), &report)?;
    write_text(
        &run_dir.join("margin/confusion.csv"),
        &report.confusion_csv(train.relation_names()),
    )?;
    Ok(())
}
