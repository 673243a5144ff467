//! The `musematch` command line: mine, train, filter, eval, query.
//!
//! Configuration comes from an optional JSON config file plus flag
//! overrides; flags win. Every command writes its effective configuration
//! next to its outputs. Exit codes: 0 success, 2 usage/config error,
//! 1 runtime failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::audio::read_wav_mono;
use crate::contrastive::{
    assemble_eval_items, assemble_train_items, train, BatchSpec, LossConfig, SentenceSampleRule,
    TrainOptions, TrainSchedule,
};
use crate::corpus::{load_corpus, resolve_audio_path, Split};
use crate::encoders::{load_checkpoint, save_checkpoint, TowerConfig, TowerModel};
use crate::error::Error;
use crate::evalharness::{
    embed_collection, evaluate_classification, evaluate_retrieval, evaluate_tagging,
    load_manifest_tracks, rank_tracks, EmbeddedCollection, QueryRelevanceIndex, RunInfo,
};
use crate::relevance::filter_dataset;
use crate::textminer::{
    load_annotations, load_mined, mine_descriptions, save_mined, train_tagger, MiningConfig,
    SpanKind, TaggerConfig, TaggerModel,
};

#[derive(Debug, Parser)]
#[command(name = "musematch", version, about = "Music description mining and cross-modal retrieval")]
pub struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed for all seeded stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine aspect and sentence descriptions from a corpus.
    Mine(MineArgs),
    /// Train the two-tower model on a corpus plus mined descriptions.
    Train(TrainArgs),
    /// Filter mined descriptions by cross-modal relevance.
    Filter(FilterArgs),
    /// Evaluate a checkpoint on retrieval or zero-shot tasks.
    Eval(EvalArgs),
    /// Rank a collection against a free-form text query.
    Query(QueryArgs),
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Corpus JSON Lines file.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Annotation JSON Lines used to train both taggers.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Pretrained aspect tagger checkpoint (with --sentence-tagger).
    #[arg(long)]
    pub aspect_tagger: Option<PathBuf>,
    /// Pretrained sentence tagger checkpoint (with --aspect-tagger).
    #[arg(long)]
    pub sentence_tagger: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Decode threshold override.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Mined descriptions JSON Lines.
    #[arg(long)]
    pub mined: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Initial learning rate override.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub mined: PathBuf,
    /// Scoring model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Relevance threshold override; items scoring below it are removed.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    /// Tag-based retrieval: every manifest label is a query.
    Retrieval,
    /// Zero-shot auto-tagging: macro ROC-AUC / PR-AUC.
    Tagging,
    /// Zero-shot classification: argmax accuracy on single labels.
    Classification,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Evaluation manifest JSON Lines.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub task: EvalTask,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated cutoffs, e.g. 1,5,10.
    #[arg(long)]
    pub ks: Option<String>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest describing the collection to search.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Free-form query text.
    #[arg(long)]
    pub query: String,
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Optional output directory for the ranking file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Full run configuration; every stage's parameters are serializable so the
/// effective config can be written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub mine: MineConfig,
    pub train: TrainStageConfig,
    pub filter: FilterConfig,
    pub eval: EvalConfig,
    pub query: QueryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mine: MineConfig::default(),
            train: TrainStageConfig::default(),
            filter: FilterConfig::default(),
            eval: EvalConfig::default(),
            query: QueryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MineConfig {
    pub tagger: TaggerConfig,
    pub mining: MiningConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainStageConfig {
    pub tower: TowerConfig,
    pub batch: BatchSpec,
    pub loss: LossConfig,
    pub schedule: TrainSchedule,
    pub sentence_rule: SentenceSampleRule,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        Self {
            tower: TowerConfig::default(),
            batch: BatchSpec::default(),
            loss: LossConfig::default(),
            schedule: TrainSchedule::default(),
            sentence_rule: SentenceSampleRule::RandomSubset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { threshold: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub k: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Runs a parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Mine(args) => cmd_mine(config, args),
        Command::Train(args) => cmd_train(config, args),
        Command::Filter(args) => cmd_filter(config, args),
        Command::Eval(args) => cmd_eval(config, args),
        Command::Query(args) => cmd_query(config, args),
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    if !path.exists() {
        return Err(usage(format!("config file {} does not exist", path.display())));
    }
    let raw = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn prepare_out_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| usage(format!("cannot create output directory {}: {e}", out.display())))?;
    Ok(())
}

fn write_effective_config(out: &Path, config: &RunConfig) -> CliResult<()> {
    let path = out.join("effective_config.json");
    let json = serde_json::to_string_pretty(config)
        .map_err(|e| CliError::Runtime(Error::InvalidInput(format!("serializing config: {e}"))))?;
    std::fs::write(&path, json)
        .map_err(|e| CliError::Runtime(Error::io(path.display().to_string(), e)))?;
    Ok(())
}

fn audio_base(corpus_path: &Path) -> PathBuf {
    corpus_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_mine(mut config: RunConfig, args: MineArgs) -> CliResult<()> {
    require_file(&args.corpus, "corpus")?;
    if let Some(t) = args.threshold {
        config.mine.mining.threshold = t;
    }
    if !(config.mine.mining.threshold > 0.0 && config.mine.mining.threshold < 1.0) {
        return Err(usage(format!(
            "threshold {} outside (0, 1)",
            config.mine.mining.threshold
        )));
    }
    prepare_out_dir(&args.out)?;

    let corpus = load_corpus(&args.corpus)?;
    let (aspect_tagger, sentence_tagger) = match (
        &args.annotations,
        &args.aspect_tagger,
        &args.sentence_tagger,
    ) {
        (Some(annotations), _, _) => {
            require_file(annotations, "annotations")?;
            let data = load_annotations(annotations)?;
            // sub-seeds keep the two taggers independent under one run seed
            let aspect = train_tagger(
                &data,
                SpanKind::Aspect,
                config.mine.tagger.clone(),
                config.seed.wrapping_add(1),
            )?;
            let sentence = train_tagger(
                &data,
                SpanKind::Sentence,
                config.mine.tagger.clone(),
                config.seed.wrapping_add(2),
            )?;
            aspect.save(args.out.join("aspect_tagger.json"))?;
            sentence.save(args.out.join("sentence_tagger.json"))?;
            (aspect, sentence)
        }
        (None, Some(aspect_path), Some(sentence_path)) => {
            require_file(aspect_path, "aspect tagger")?;
            require_file(sentence_path, "sentence tagger")?;
            (TaggerModel::load(aspect_path)?, TaggerModel::load(sentence_path)?)
        }
        _ => {
            return Err(usage(
                "provide --annotations, or both --aspect-tagger and --sentence-tagger",
            ))
        }
    };

    let mined = mine_descriptions(&corpus, &aspect_tagger, &sentence_tagger, &config.mine.mining)?;
    save_mined(&mined, args.out.join("mined.jsonl"))?;

    let stats = crate::corpus::compute_stats(&corpus, &mined, &audio_base(&args.corpus))?;
    let stats_json = serde_json::to_string_pretty(&stats)
        .map_err(|e| CliError::Runtime(Error::InvalidInput(format!("serializing stats: {e}"))))?;
    std::fs::write(args.out.join("stats.json"), stats_json)
        .map_err(|e| CliError::Runtime(Error::io("stats.json", e)))?;

    write_effective_config(&args.out, &config)?;
    println!(
        "mined {} tracks -> {}",
        mined.len(),
        args.out.join("mined.jsonl").display()
    );
    Ok(())
}

fn cmd_train(mut config: RunConfig, args: TrainArgs) -> CliResult<()> {
    require_file(&args.corpus, "corpus")?;
    require_file(&args.mined, "mined descriptions")?;
    if let Some(lr) = args.lr {
        config.train.schedule.initial_lr = lr;
    }
    if let Some(b) = args.batch_size {
        config.train.batch.batch_size = b;
    }
    if let Some(t) = args.temperature {
        config.train.loss.temperature = t;
    }
    if let Some(m) = args.max_epochs {
        config.train.schedule.max_epochs = m;
    }
    if !(config.train.loss.temperature > 0.0) {
        return Err(usage(format!(
            "temperature {} must be positive",
            config.train.loss.temperature
        )));
    }
    if config.train.batch.batch_size < 2 {
        return Err(usage("batch size must be at least 2"));
    }
    config
        .train
        .schedule
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    prepare_out_dir(&args.out)?;

    let corpus = load_corpus(&args.corpus)?;
    for split in [Split::Train, Split::Valid, Split::Test] {
        if corpus.split_records(split).is_empty() {
            return Err(usage(format!(
                "corpus split '{split}' is empty; training needs all three splits"
            )));
        }
    }
    let mined = load_mined(&args.mined)?;
    let base = audio_base(&args.corpus);
    let train_items = assemble_train_items(&corpus, &mined, &base, Split::Train)?;
    let valid_items = assemble_eval_items(&corpus, &mined, &base, Split::Valid)?;

    let model = TowerModel::init(config.train.tower.clone(), config.seed)?;
    let opts = TrainOptions {
        batch: config.train.batch.clone(),
        loss: config.train.loss.clone(),
        schedule: config.train.schedule.clone(),
        sentence_rule: config.train.sentence_rule,
        seed: config.seed,
    };
    let (trained, history) = train(model, &train_items, &valid_items, &opts)?;

    save_checkpoint(&trained, args.out.join("checkpoint.json"))?;
    history.save(args.out.join("history.jsonl"))?;
    write_effective_config(&args.out, &config)?;
    let best = history
        .epochs
        .iter()
        .map(|e| e.val_map10)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "trained {} epochs, best val mAP@10 {:.4} -> {}",
        history.epochs.len(),
        best,
        args.out.join("checkpoint.json").display()
    );
    Ok(())
}

fn cmd_filter(mut config: RunConfig, args: FilterArgs) -> CliResult<()> {
    require_file(&args.corpus, "corpus")?;
    require_file(&args.mined, "mined descriptions")?;
    require_file(&args.checkpoint, "checkpoint")?;
    if let Some(t) = args.threshold {
        config.filter.threshold = t;
    }
    prepare_out_dir(&args.out)?;

    let corpus = load_corpus(&args.corpus)?;
    let mined = load_mined(&args.mined)?;
    let model = load_checkpoint(&args.checkpoint)?;
    let base = audio_base(&args.corpus);

    let resolve = |track_id: &str| {
        let record = corpus
            .record(track_id)
            .ok_or_else(|| Error::InvalidInput(format!("track {track_id} not in corpus")))?;
        read_wav_mono(resolve_audio_path(&base, &record.audio_ref))
    };
    let (filtered, report) = filter_dataset(&model, &mined, resolve, config.filter.threshold);

    save_mined(&filtered, args.out.join("filtered.jsonl"))?;
    report.save(args.out.join("filter_report.jsonl"))?;
    if !report.errors.is_empty() {
        report.save_errors(args.out.join("filter_errors.txt"))?;
    }
    write_effective_config(&args.out, &config)?;
    println!(
        "kept {} items, removed {} -> {}",
        report.kept.len(),
        report.removed.len(),
        args.out.join("filtered.jsonl").display()
    );
    Ok(())
}

fn parse_ks(raw: &str) -> CliResult<Vec<usize>> {
    let ks = raw
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| usage(format!("invalid cutoff list {raw:?}: {e}")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(usage("cutoffs must be positive integers"));
    }
    Ok(ks)
}

fn cmd_eval(mut config: RunConfig, args: EvalArgs) -> CliResult<()> {
    require_file(&args.manifest, "manifest")?;
    require_file(&args.checkpoint, "checkpoint")?;
    if let Some(raw) = &args.ks {
        config.eval.ks = parse_ks(raw)?;
    }
    prepare_out_dir(&args.out)?;

    let model = load_checkpoint(&args.checkpoint)?;
    let tracks = load_manifest_tracks(&args.manifest, &audio_base(&args.manifest))?;
    let info = RunInfo {
        model_id: args.checkpoint.display().to_string(),
        dataset_id: args.manifest.display().to_string(),
        seed: config.seed,
        ks: config.eval.ks.clone(),
    };

    let report = match args.task {
        EvalTask::Retrieval => {
            let index = QueryRelevanceIndex::from_labels(
                tracks.iter().map(|t| (t.track_id.as_str(), t.labels.iter())),
            );
            let collection: Vec<(String, crate::audio::AudioClip)> = tracks
                .iter()
                .map(|t| (t.track_id.clone(), t.clip.clone()))
                .collect();
            evaluate_retrieval(&model, &collection, &index, &config.eval.ks, info)?
        }
        EvalTask::Tagging => evaluate_tagging(&model, &tracks, info)?,
        EvalTask::Classification => evaluate_classification(&model, &tracks, info)?,
    };

    report.save(args.out.join("metrics.json"))?;
    write_effective_config(&args.out, &config)?;
    for (name, pct) in &report.percent {
        println!("{name}: {pct}");
    }
    Ok(())
}

fn cmd_query(mut config: RunConfig, args: QueryArgs) -> CliResult<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_file(&args.manifest, "manifest")?;
    if args.query.trim().is_empty() {
        return Err(usage("query text is empty"));
    }
    if let Some(k) = args.k {
        if k == 0 {
            return Err(usage("k must be at least 1"));
        }
        config.query.k = k;
    }

    let model = load_checkpoint(&args.checkpoint)?;
    let tracks = load_manifest_tracks(&args.manifest, &audio_base(&args.manifest))?;
    if tracks.is_empty() {
        return Err(usage("manifest lists no tracks"));
    }
    let clips: Vec<crate::audio::AudioClip> = tracks.iter().map(|t| t.clip.clone()).collect();
    let embeddings = embed_collection(&model, &clips)?;
    let coll = EmbeddedCollection {
        track_ids: tracks.iter().map(|t| t.track_id.clone()).collect(),
        embeddings,
    };
    let query_emb = model.encode_text(&args.query)?;
    let ranking = rank_tracks(&query_emb, &coll);

    let sims: BTreeMap<String, f64> = coll
        .track_ids
        .iter()
        .zip(&coll.embeddings)
        .map(|(id, e)| (id.clone(), crate::encoders::similarity(&query_emb, e)))
        .collect();
    let mut lines = String::new();
    for (rank, track_id) in ranking.iter().take(config.query.k).enumerate() {
        let line = format!("{}\t{}\t{:.6}", rank + 1, track_id, sims[track_id]);
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    }

    if let Some(out) = &args.out {
        prepare_out_dir(out)?;
        std::fs::write(out.join("ranking.tsv"), lines)
            .map_err(|e| CliError::Runtime(Error::io("ranking.tsv", e)))?;
        write_effective_config(out, &config)?;
    }
    Ok(())
}
