//! End-to-end experiment runs: corpus -> query generation -> training ->
//! indexing -> evaluation, with a manifest recording every artifact.
//!
//! Three kinds of run:
//! - zero-shot: train on the source dataset (gold pairs or synthetic),
//!   evaluate unchanged on each target dataset;
//! - domain adaptation: start from a source-trained model, finetune on
//!   synthetic pairs generated from the target's documents, report base and
//!   adapted scores side by side;
//! - sweep: one zero-shot run per generator label, aggregated into a
//!   comparison table.
//!
//! Everything under the run's output directory has a fixed name:
//! manifest.json, pairs.jsonl / gold-pairs.jsonl, generation-stats.json,
//! llm-checkpoint.jsonl, model.bin (and base-model.bin when the base is
//! trained in-run), training-history.json, targets/{name}/index.bin,
//! targets/{name}/run.tsv (run-base.tsv for the unadapted model), and
//! reports/{metric}.json + .txt.
//!
//! One seed drives everything. Each stage derives its own substream from
//! (seed, stage name), so regenerating pairs does not disturb the shuffle
//! order of training, and any stage can be reproduced in isolation.

pub mod analyze;
pub mod config_file;
pub mod manifest;

pub use analyze::{analyze, AnalysisReport, StartingWord, STARTING_WORDS_TOP_N};
pub use config_file::{load_config, parse_config};
pub use manifest::{sha256_file, RunManifest, Runner, StageRecord};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_corpus, load_pairs, load_qrels, load_queries, save_pairs, split_dev, CorpusLoad,
    Document, Qrels, Query, QueryLoad, SyntheticPair,
};
use crate::crop::{self, CropConfig};
use crate::encoder::io::{load_model, save_model};
use crate::encoder::{
    pairs_from_synthetic, train, DevSet, EncoderModel, EncoderParams, TrainConfig, TrainPair,
    TrainState,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, EvalConventions, EvalReport, Metric, MethodScores};
use crate::index::{write_run_file, DenseIndex};
use crate::llm::{self, GenerationConfig, GenerationStats, PromptTemplate};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Supervised,
    UnsupervisedLlm,
    UnsupervisedCrop,
    DaLlm,
    DaCrop,
}

impl Arm {
    pub fn is_da(self) -> bool {
        matches!(self, Arm::DaLlm | Arm::DaCrop)
    }

    pub fn uses_crop(self) -> bool {
        matches!(self, Arm::UnsupervisedCrop | Arm::DaCrop)
    }

    pub fn uses_llm(self) -> bool {
        matches!(self, Arm::UnsupervisedLlm | Arm::DaLlm)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Arm::Supervised => "supervised",
            Arm::UnsupervisedLlm => "unsupervised-llm",
            Arm::UnsupervisedCrop => "unsupervised-crop",
            Arm::DaLlm => "da-llm",
            Arm::DaCrop => "da-crop",
        };
        f.write_str(name)
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Arm::Supervised),
            "unsupervised-llm" => Ok(Arm::UnsupervisedLlm),
            "unsupervised-crop" => Ok(Arm::UnsupervisedCrop),
            "da-llm" => Ok(Arm::DaLlm),
            "da-crop" => Ok(Arm::DaCrop),
            other => Err(Error::InvalidConfig(format!("unknown arm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub arm: Arm,
    pub source_dataset: PathBuf,
    /// Where to evaluate (and, for da arms, generate from). Defaults to the
    /// source dataset. May point at one dataset directory or at a parent
    /// directory holding several.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Single root seed; stages derive their own substreams from it.
    pub seed: u64,
    /// Ks evaluated; both metrics are computed at every k.
    pub k_values: Vec<usize>,
    /// Pairs held out for epoch selection (and DA early quality checks).
    pub dev_size: usize,
    /// da arms: reuse this trained model instead of training on source gold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_model: Option<PathBuf>,
    /// Method name in reports; defaults to the arm (llm arms: model label).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Prompt template file for llm arms; built-in default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    pub encoder: EncoderParams,
    pub train: TrainConfig,
    pub crop: CropConfig,
    pub llm: GenerationConfig,
}

impl ExperimentConfig {
    pub fn new(arm: Arm, source_dataset: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            arm,
            source_dataset: source_dataset.into(),
            target_dataset: None,
            output_dir: PathBuf::from(format!("runs/{arm}")),
            seed: 0,
            k_values: vec![10, 100],
            dev_size: 1000,
            base_model: None,
            label: None,
            template: None,
            encoder: EncoderParams::default(),
            train: TrainConfig::default(),
            crop: CropConfig::default(),
            llm: GenerationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::InvalidConfig("k-values must not be empty".into()));
        }
        if self.k_values.contains(&0) {
            return Err(Error::InvalidConfig("k-values must be >= 1".into()));
        }
        let mut dedup = self.k_values.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != self.k_values.len() {
            return Err(Error::InvalidConfig("k-values must be distinct".into()));
        }
        if self.dev_size == 0 {
            return Err(Error::InvalidConfig(
                "dev-size must be >= 1 (epoch selection needs a dev set)".into(),
            ));
        }
        if self.arm.is_da() && self.target_dataset.is_none() {
            return Err(Error::InvalidConfig(format!(
                "arm {} requires target-dataset",
                self.arm
            )));
        }
        self.train.validate()?;
        if self.arm.uses_crop() {
            self.crop.validate()?;
        }
        if self.arm.uses_llm() {
            self.llm.validate()?;
        }
        Ok(())
    }

    /// Name this run's method carries in reports.
    pub fn method_label(&self) -> String {
        if let Some(label) = &self.label {
            return label.clone();
        }
        if self.arm.uses_llm() {
            return format!("{}:{}", self.arm, self.llm.model_label);
        }
        self.arm.to_string()
    }
}

/// A BEIR-style dataset directory: corpus.jsonl, queries.jsonl,
/// qrels/{split}.tsv.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub dir: PathBuf,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.join("corpus.jsonl").is_file() {
            return Err(Error::InvalidInput(format!(
                "{} has no corpus.jsonl",
                dir.display()
            )));
        }
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::InvalidInput(format!("{} has no directory name", dir.display())))?;
        Ok(Dataset {
            name,
            dir: dir.to_path_buf(),
        })
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.dir.join("corpus.jsonl")
    }

    pub fn queries_path(&self) -> PathBuf {
        self.dir.join("queries.jsonl")
    }

    pub fn qrels_path(&self, split: &str) -> PathBuf {
        self.dir.join("qrels").join(format!("{split}.tsv"))
    }

    pub fn load_corpus(&self) -> Result<CorpusLoad> {
        load_corpus(self.corpus_path())
    }

    pub fn load_queries(&self) -> Result<QueryLoad> {
        load_queries(self.queries_path())
    }

    pub fn load_qrels(&self, split: &str) -> Result<Qrels> {
        load_qrels(self.qrels_path(split))
    }
}

/// One dataset directory, or every dataset under a parent directory
/// (sorted by name).
pub fn resolve_datasets(path: impl AsRef<Path>) -> Result<Vec<Dataset>> {
    let path = path.as_ref();
    if path.join("corpus.jsonl").is_file() {
        return Ok(vec![Dataset::open(path)?]);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut datasets = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let child = entry.path();
        if child.is_dir() && child.join("corpus.jsonl").is_file() {
            datasets.push(Dataset::open(&child)?);
        }
    }
    if datasets.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} holds no dataset (no corpus.jsonl here or in children)",
            path.display()
        )));
    }
    datasets.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(datasets)
}

/// A u64 seed for one named stage, derived from the run seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    substream(seed, stage, 0).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainSummary {
    /// Dev score of the starting model (for da runs: the base model).
    pub initial_dev_ndcg10: f64,
    pub best_dev_ndcg10: f64,
    pub best_epoch: usize,
    pub epochs_completed: usize,
}

impl From<&TrainState> for TrainSummary {
    fn from(state: &TrainState) -> Self {
        TrainSummary {
            initial_dev_ndcg10: state.initial_dev_ndcg10,
            best_dev_ndcg10: state.best_dev_ndcg10,
            best_epoch: state.best_epoch,
            epochs_completed: state.epochs_completed,
        }
    }
}

#[derive(Debug)]
pub struct PipelineOutcome {
    /// metric name (e.g. "ndcg@10") -> report
    pub reports: BTreeMap<String, EvalReport>,
    pub train: TrainSummary,
    pub manifest: RunManifest,
}

pub fn metrics_for(k_values: &[usize]) -> Vec<Metric> {
    let mut metrics: Vec<Metric> = k_values.iter().map(|&k| Metric::ndcg(k)).collect();
    metrics.extend(k_values.iter().map(|&k| Metric::recall(k)));
    metrics
}

/// Dispatch on the arm.
pub fn run(config: &ExperimentConfig) -> Result<PipelineOutcome> {
    if config.arm.is_da() {
        run_domain_adaptation(config)
    } else {
        run_zero_shot(config)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-stage configs with their seeds derived from the run seed. The
/// "base-" set exists so a da run's in-run base training does not share
/// streams with the adaptation phase.
struct Seeded {
    encoder: EncoderParams,
    train: TrainConfig,
    crop: CropConfig,
    llm: GenerationConfig,
    dev_seed: u64,
    base_encoder: EncoderParams,
    base_train: TrainConfig,
    base_dev_seed: u64,
}

impl Seeded {
    fn new(config: &ExperimentConfig) -> Self {
        let s = config.seed;
        let mut encoder = config.encoder;
        encoder.seed = stage_seed(s, "seed:init");
        let mut train = config.train.clone();
        train.seed = stage_seed(s, "seed:train");
        let mut crop = config.crop.clone();
        crop.seed = stage_seed(s, "seed:generate");
        let mut llm = config.llm.clone();
        llm.seed = Some(stage_seed(s, "seed:generate"));
        let mut base_encoder = config.encoder;
        base_encoder.seed = stage_seed(s, "seed:base-init");
        let mut base_train = config.train.clone();
        base_train.seed = stage_seed(s, "seed:base-train");
        Seeded {
            encoder,
            train,
            crop,
            llm,
            dev_seed: stage_seed(s, "seed:dev-split"),
            base_encoder,
            base_train,
            base_dev_seed: stage_seed(s, "seed:base-dev-split"),
        }
    }
}

#[derive(Serialize)]
struct GoldRecord<'a> {
    #[serde(rename = "query-id")]
    query_id: &'a str,
    #[serde(rename = "doc-id")]
    doc_id: &'a str,
}

/// Gold pairs from a dataset's train qrels: one pair per (judged query,
/// relevant doc). Returns the pairs and how many judgments were unusable
/// (missing query/doc, empty text).
fn gold_train_pairs(dataset: &Dataset) -> Result<(Vec<TrainPair>, usize)> {
    let corpus = dataset.load_corpus()?;
    let queries = dataset.load_queries()?;
    let qrels = dataset.load_qrels("train")?;
    let docs: BTreeMap<&str, &Document> =
        corpus.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let texts: BTreeMap<&str, &Query> =
        queries.queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for qid in qrels.query_ids() {
        let Some(query) = texts.get(qid) else {
            skipped += qrels.relevant_docs(qid).len();
            continue;
        };
        for doc_id in qrels.relevant_docs(qid) {
            let Some(doc) = docs.get(doc_id) else {
                skipped += 1;
                continue;
            };
            match TrainPair::new(qid, &query.text, doc_id, &doc.full_text()) {
                Ok(pair) => pairs.push(pair),
                Err(_) => skipped += 1,
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "dataset {} yields no usable gold pairs",
            dataset.name
        )));
    }
    Ok((pairs, skipped))
}

fn write_gold_records(path: &Path, pairs: &[TrainPair]) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        let record = GoldRecord {
            query_id: &pair.query_id,
            doc_id: &pair.doc_id,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Generate synthetic pairs from documents per the arm's generator, saving
/// pairs.jsonl (and, for llm, generation-stats.json plus the checkpoint).
fn generate_synthetic(
    config: &ExperimentConfig,
    seeded: &Seeded,
    docs: &[Document],
    out_dir: &Path,
    rec: &mut StageRecord,
) -> Result<(Vec<SyntheticPair>, Option<GenerationStats>)> {
    let pairs_path = out_dir.join("pairs.jsonl");
    if config.arm.uses_crop() {
        let run = crop::generate_corpus(docs, &seeded.crop)?;
        save_pairs(&pairs_path, &run.pairs)?;
        rec.output("pairs", &pairs_path)?;
        rec.note("pairs", run.pairs.len());
        rec.note("lost-docs", run.lost.len());
        Ok((run.pairs, None))
    } else if config.arm.uses_llm() {
        let template = match &config.template {
            Some(path) => {
                rec.input("template", path)?;
                PromptTemplate::load(path)?
            }
            None => PromptTemplate::default(),
        };
        let checkpoint = out_dir.join("llm-checkpoint.jsonl");
        let run = llm::generate_corpus(docs, &template, &seeded.llm, Some(&checkpoint))?;
        save_pairs(&pairs_path, &run.pairs)?;
        rec.output("pairs", &pairs_path)?;
        let stats_path = out_dir.join("generation-stats.json");
        run.stats.save(&stats_path)?;
        rec.output("generation-stats", &stats_path)?;
        rec.note("pairs", run.pairs.len());
        rec.note("kept", run.stats.kept);
        rec.note("empty", run.stats.empty);
        rec.note("prompt-duplicate", run.stats.prompt_duplicate);
        rec.note("failed-docs", run.failed.len());
        Ok((run.pairs, Some(run.stats)))
    } else {
        Err(Error::InvalidConfig(format!(
            "arm {} does not generate synthetic pairs",
            config.arm
        )))
    }
}

/// Split train/dev with the strict pipeline rule: the dev slice must leave
/// at least one training pair.
fn split_for_training(
    pairs: Vec<TrainPair>,
    dev_size: usize,
    seed: u64,
) -> Result<(Vec<TrainPair>, Vec<TrainPair>)> {
    if pairs.len() <= dev_size {
        return Err(Error::InvalidConfig(format!(
            "dev-size {dev_size} needs more than {} pairs",
            pairs.len()
        )));
    }
    let (rest, dev) = split_dev(pairs, dev_size, seed);
    Ok((rest, dev))
}

fn train_and_save(
    params: EncoderParams,
    train_cfg: &TrainConfig,
    train_pairs: &[TrainPair],
    dev: &DevSet,
    model_path: &Path,
    history_path: &Path,
    rec: &mut StageRecord,
) -> Result<TrainState> {
    let model = EncoderModel::new(params)?;
    let state = train(model, train_pairs, dev, train_cfg)?;
    let snapshot = serde_json::to_string_pretty(&serde_json::json!({
        "encoder": params,
        "train": train_cfg,
        "best-epoch": state.best_epoch,
        "best-dev-ndcg10": state.best_dev_ndcg10,
        "initial-dev-ndcg10": state.initial_dev_ndcg10,
        "history": state.history,
    }))?;
    save_model(model_path, &state.best_model, &snapshot)?;
    rec.output(
        model_path.file_name().unwrap().to_str().unwrap(),
        model_path,
    )?;
    let mut history = serde_json::to_string_pretty(&state.history)?;
    history.push('\n');
    write_text(history_path, &history)?;
    rec.output("training-history", history_path)?;
    rec.note("best-epoch", state.best_epoch);
    rec.note("best-dev-ndcg10", state.best_dev_ndcg10);
    rec.note("initial-dev-ndcg10", state.initial_dev_ndcg10);
    Ok(state)
}

/// Index one target with one model, rank its judged test queries, and
/// score every metric. `suffix` distinguishes artifacts when two models
/// are evaluated on the same target ("" or "-base").
fn evaluate_target(
    runner: &mut Runner,
    model: &EncoderModel,
    target: &Dataset,
    target_dir: &Path,
    suffix: &str,
    metrics: &[Metric],
    max_k: usize,
    conventions: &EvalConventions,
) -> Result<BTreeMap<String, f64>> {
    let index = runner.stage(&format!("index{suffix}:{}", target.name), |rec| {
        rec.input("corpus", target.corpus_path())?;
        let load = target.load_corpus()?;
        let build = DenseIndex::build(model, &load.documents)?;
        let index_path = target_dir.join(format!("index{suffix}.bin"));
        build.index.save(&index_path)?;
        rec.output("index", &index_path)?;
        rec.note("documents", load.documents.len());
        rec.note("skipped-docs", build.skipped.len());
        rec.note("skipped-lines", load.skipped.len());
        Ok(build.index)
    })?;
    let (rankings, qrels) = runner.stage(&format!("search{suffix}:{}", target.name), |rec| {
        rec.input("queries", target.queries_path())?;
        rec.input("test-qrels", target.qrels_path("test"))?;
        let queries = target.load_queries()?;
        let qrels = target.load_qrels("test")?;
        let judged: Vec<Query> = queries
            .queries
            .into_iter()
            .filter(|q| qrels.contains_query(&q.id))
            .collect();
        if judged.is_empty() {
            return Err(Error::InvalidInput(format!(
                "dataset {} has no judged queries",
                target.name
            )));
        }
        rec.note("judged-queries", judged.len());
        rec.note(
            "judged-without-text",
            qrels.query_count().saturating_sub(judged.len()),
        );
        let outcome = index.batch_search(model, &judged, max_k)?;
        rec.note("search-failures", outcome.failures.len());
        let run_path = target_dir.join(format!("run{suffix}.tsv"));
        write_run_file(&run_path, &outcome.rankings)?;
        rec.output("run", &run_path)?;
        Ok((outcome.rankings, qrels))
    })?;
    runner.stage(&format!("eval{suffix}:{}", target.name), |rec| {
        let mut scores = BTreeMap::new();
        for metric in metrics {
            let score = evaluate_run(&rankings, &qrels, *metric, conventions)?;
            rec.note(&metric.to_string(), score.value);
            scores.insert(metric.to_string(), score.value);
        }
        Ok(scores)
    })
}

fn write_reports(
    runner: &mut Runner,
    out_dir: &Path,
    metrics: &[Metric],
    conventions: EvalConventions,
    methods: &[(String, BTreeMap<String, BTreeMap<String, f64>>)],
) -> Result<BTreeMap<String, EvalReport>> {
    runner.stage("report", |rec| {
        let mut reports = BTreeMap::new();
        for metric in metrics {
            let name = metric.to_string();
            let scores: Vec<MethodScores> = methods
                .iter()
                .map(|(label, per_metric)| MethodScores {
                    method: label.clone(),
                    per_dataset: per_metric.get(&name).cloned().unwrap_or_default(),
                })
                .collect();
            let report = EvalReport::build(*metric, conventions, &scores)?;
            let json_path = out_dir.join("reports").join(format!("{name}.json"));
            report.save(&json_path)?;
            rec.output(&format!("{name}.json"), &json_path)?;
            let table_path = out_dir.join("reports").join(format!("{name}.txt"));
            write_text(&table_path, &report.format_table())?;
            rec.output(&format!("{name}.txt"), &table_path)?;
            reports.insert(name, report);
        }
        Ok(reports)
    })
}

/// Train on the source dataset, evaluate on every target dataset.
pub fn run_zero_shot(config: &ExperimentConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    if config.arm.is_da() {
        return Err(Error::InvalidConfig(format!(
            "arm {} is a domain-adaptation arm; run it through run_domain_adaptation",
            config.arm
        )));
    }
    let out = &config.output_dir;
    fs::create_dir_all(out.join("reports")).map_err(|e| Error::io(out, e))?;
    fs::create_dir_all(out.join("targets")).map_err(|e| Error::io(out, e))?;
    let seeded = Seeded::new(config);
    let mut runner = Runner::new(out.join("manifest.json"), serde_json::to_value(config)?)?;

    let (source, source_docs, targets) = runner.stage("ingest", |rec| {
        let source = Dataset::open(&config.source_dataset)?;
        rec.input("source-corpus", source.corpus_path())?;
        let load = source.load_corpus()?;
        if load.documents.is_empty() {
            return Err(Error::InvalidInput("source corpus is empty".into()));
        }
        rec.note("source-documents", load.documents.len());
        rec.note("source-skipped-lines", load.skipped.len());
        let targets = resolve_datasets(
            config
                .target_dataset
                .as_deref()
                .unwrap_or(&config.source_dataset),
        )?;
        rec.note(
            "targets",
            targets.iter().map(|t| t.name.clone()).collect::<Vec<_>>(),
        );
        Ok((source, load.documents, targets))
    })?;

    let (all_pairs, generation_stats) = runner.stage("generate", |rec| {
        if config.arm == Arm::Supervised {
            rec.input("queries", source.queries_path())?;
            rec.input("train-qrels", source.qrels_path("train"))?;
            let (pairs, skipped) = gold_train_pairs(&source)?;
            let gold_path = out.join("gold-pairs.jsonl");
            write_gold_records(&gold_path, &pairs)?;
            rec.output("gold-pairs", &gold_path)?;
            rec.note("pairs", pairs.len());
            rec.note("skipped-judgments", skipped);
            Ok((pairs, None))
        } else {
            let (synthetic, stats) = generate_synthetic(config, &seeded, &source_docs, out, rec)?;
            let (pairs, skipped) = pairs_from_synthetic(&synthetic, &source_docs);
            rec.note("unusable-pairs", skipped.len());
            if pairs.is_empty() {
                return Err(Error::InvalidInput("generation produced no usable pairs".into()));
            }
            Ok((pairs, stats))
        }
    })?;
    if let Some(stats) = generation_stats {
        runner.set_generation_stats(stats);
    }

    let (train_pairs, dev) = runner.stage("split-dev", |rec| {
        let (rest, dev_pairs) = split_for_training(all_pairs, config.dev_size, seeded.dev_seed)?;
        let dev = DevSet::from_pairs(&dev_pairs)?;
        rec.note("train-pairs", rest.len());
        rec.note("dev-pairs", dev_pairs.len());
        Ok((rest, dev))
    })?;

    let state = runner.stage("train", |rec| {
        train_and_save(
            seeded.encoder,
            &seeded.train,
            &train_pairs,
            &dev,
            &out.join("model.bin"),
            &out.join("training-history.json"),
            rec,
        )
    })?;

    let metrics = metrics_for(&config.k_values);
    let max_k = *config.k_values.iter().max().unwrap();
    let conventions = EvalConventions::default();
    let mut per_metric: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for target in &targets {
        let target_dir = out.join("targets").join(&target.name);
        fs::create_dir_all(&target_dir).map_err(|e| Error::io(&target_dir, e))?;
        let scores = evaluate_target(
            &mut runner,
            &state.best_model,
            target,
            &target_dir,
            "",
            &metrics,
            max_k,
            &conventions,
        )?;
        for (metric, value) in scores {
            per_metric
                .entry(metric)
                .or_default()
                .insert(target.name.clone(), value);
        }
    }

    let methods = vec![(config.method_label(), per_metric)];
    let reports = write_reports(&mut runner, out, &metrics, conventions, &methods)?;
    let manifest = runner.finish()?;
    Ok(PipelineOutcome {
        reports,
        train: TrainSummary::from(&state),
        manifest,
    })
}

/// Finetune a source-trained model on synthetic pairs from the target's
/// documents, then report base and adapted scores side by side.
pub fn run_domain_adaptation(config: &ExperimentConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    if !config.arm.is_da() {
        return Err(Error::InvalidConfig(format!(
            "arm {} is not a domain-adaptation arm",
            config.arm
        )));
    }
    let out = &config.output_dir;
    fs::create_dir_all(out.join("reports")).map_err(|e| Error::io(out, e))?;
    fs::create_dir_all(out.join("targets")).map_err(|e| Error::io(out, e))?;
    let seeded = Seeded::new(config);
    let mut runner = Runner::new(out.join("manifest.json"), serde_json::to_value(config)?)?;

    let (target, target_docs) = runner.stage("ingest", |rec| {
        let targets = resolve_datasets(config.target_dataset.as_deref().unwrap())?;
        if targets.len() != 1 {
            return Err(Error::InvalidConfig(format!(
                "domain adaptation takes one target dataset, found {}",
                targets.len()
            )));
        }
        let target = targets.into_iter().next().unwrap();
        rec.input("target-corpus", target.corpus_path())?;
        let load = target.load_corpus()?;
        if load.documents.is_empty() {
            return Err(Error::InvalidInput("target corpus is empty".into()));
        }
        rec.note("target-documents", load.documents.len());
        rec.note("target-skipped-lines", load.skipped.len());
        Ok((target, load.documents))
    })?;

    let base = runner.stage("base-model", |rec| {
        if let Some(path) = &config.base_model {
            rec.input("base-model", path)?;
            let (model, _snapshot) = load_model(path)?;
            rec.note("source", "loaded from file");
            Ok(model)
        } else {
            let source = Dataset::open(&config.source_dataset)?;
            rec.input("source-corpus", source.corpus_path())?;
            rec.input("queries", source.queries_path())?;
            rec.input("train-qrels", source.qrels_path("train"))?;
            let (pairs, skipped) = gold_train_pairs(&source)?;
            rec.note("gold-pairs", pairs.len());
            rec.note("skipped-judgments", skipped);
            let gold_path = out.join("gold-pairs.jsonl");
            write_gold_records(&gold_path, &pairs)?;
            rec.output("gold-pairs", &gold_path)?;
            let (rest, dev_pairs) =
                split_for_training(pairs, config.dev_size, seeded.base_dev_seed)?;
            let dev = DevSet::from_pairs(&dev_pairs)?;
            rec.note("source", "trained on source gold pairs");
            let state = train_and_save(
                seeded.base_encoder,
                &seeded.base_train,
                &rest,
                &dev,
                &out.join("base-model.bin"),
                &out.join("base-training-history.json"),
                rec,
            )?;
            Ok(state.best_model)
        }
    })?;

    let (synthetic, generation_stats) = runner.stage("generate", |rec| {
        generate_synthetic(config, &seeded, &target_docs, out, rec)
    })?;
    if let Some(stats) = generation_stats {
        runner.set_generation_stats(stats);
    }

    let (train_pairs, dev) = runner.stage("split-dev", |rec| {
        let (pairs, skipped) = pairs_from_synthetic(&synthetic, &target_docs);
        rec.note("unusable-pairs", skipped.len());
        if pairs.is_empty() {
            return Err(Error::InvalidInput("generation produced no usable pairs".into()));
        }
        let (rest, dev_pairs) = split_for_training(pairs, config.dev_size, seeded.dev_seed)?;
        let test_qrels = target.load_qrels("test")?;
        let overlap: Vec<&str> = dev_pairs
            .iter()
            .map(|p| p.query_id.as_str())
            .filter(|qid| test_qrels.contains_query(qid))
            .collect();
        if !overlap.is_empty() {
            return Err(Error::InvalidInput(format!(
                "dev split shares {} query ids with target test qrels (first: {:?})",
                overlap.len(),
                overlap[0]
            )));
        }
        let dev = DevSet::from_pairs(&dev_pairs)?;
        rec.note("train-pairs", rest.len());
        rec.note("dev-pairs", dev_pairs.len());
        Ok((rest, dev))
    })?;

    let state = runner.stage("finetune", |rec| {
        let state = train(base.clone(), &train_pairs, &dev, &seeded.train)?;
        let snapshot = serde_json::to_string_pretty(&serde_json::json!({
            "train": &seeded.train,
            "best-epoch": state.best_epoch,
            "best-dev-ndcg10": state.best_dev_ndcg10,
            "initial-dev-ndcg10": state.initial_dev_ndcg10,
            "history": state.history,
        }))?;
        let model_path = out.join("model.bin");
        save_model(&model_path, &state.best_model, &snapshot)?;
        rec.output("model.bin", &model_path)?;
        let mut history = serde_json::to_string_pretty(&state.history)?;
        history.push('\n');
        let history_path = out.join("training-history.json");
        write_text(&history_path, &history)?;
        rec.output("training-history", &history_path)?;
        rec.note("base-dev-ndcg10", state.initial_dev_ndcg10);
        rec.note("best-dev-ndcg10", state.best_dev_ndcg10);
        rec.note("best-epoch", state.best_epoch);
        Ok(state)
    })?;

    let metrics = metrics_for(&config.k_values);
    let max_k = *config.k_values.iter().max().unwrap();
    let conventions = EvalConventions::default();
    let target_dir = out.join("targets").join(&target.name);
    fs::create_dir_all(&target_dir).map_err(|e| Error::io(&target_dir, e))?;

    let mut methods: Vec<(String, BTreeMap<String, BTreeMap<String, f64>>)> = Vec::new();
    for (label, model, suffix) in [
        ("zero-shot".to_string(), &base, "-base"),
        (config.method_label(), &state.best_model, ""),
    ] {
        let scores = evaluate_target(
            &mut runner,
            model,
            &target,
            &target_dir,
            suffix,
            &metrics,
            max_k,
            &conventions,
        )?;
        let mut per_metric: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (metric, value) in scores {
            per_metric
                .entry(metric)
                .or_default()
                .insert(target.name.clone(), value);
        }
        methods.push((label, per_metric));
    }

    let reports = write_reports(&mut runner, out, &metrics, conventions, &methods)?;
    let manifest = runner.finish()?;
    Ok(PipelineOutcome {
        reports,
        train: TrainSummary::from(&state),
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepFailure {
    pub label: String,
    pub error: String,
}

#[derive(Debug)]
pub struct SweepOutcome {
    /// metric name -> cross-label comparison
    pub reports: BTreeMap<String, EvalReport>,
    pub failures: Vec<SweepFailure>,
    pub labels: Vec<String>,
}

/// Config as JSON with the fields a sweep is allowed to vary removed, so
/// the rest can be compared for equality.
fn sweep_comparable(config: &ExperimentConfig) -> Result<serde_json::Value> {
    let mut value = serde_json::to_value(config)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("label");
        obj.remove("output-dir");
        if let Some(llm) = obj.get_mut("llm").and_then(|v| v.as_object_mut()) {
            llm.remove("endpoint-url");
            llm.remove("model-label");
        }
    }
    Ok(value)
}

/// One zero-shot run per generator label, then a cross-label comparison.
/// Individual run failures are collected, not fatal, as long as at least
/// one run completes.
pub fn checkpoint_sweep(
    configs: &[ExperimentConfig],
    sweep_dir: impl AsRef<Path>,
) -> Result<SweepOutcome> {
    let sweep_dir = sweep_dir.as_ref();
    if configs.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one config".into()));
    }
    let mut labels = Vec::new();
    for config in configs {
        if config.arm.is_da() || config.arm == Arm::Supervised {
            return Err(Error::InvalidConfig(format!(
                "sweep arms must be unsupervised, got {}",
                config.arm
            )));
        }
        let label = config.method_label();
        if labels.contains(&label) {
            return Err(Error::InvalidConfig(format!(
                "sweep labels must be distinct, {label:?} repeats"
            )));
        }
        labels.push(label);
    }
    let dirs: Vec<&PathBuf> = configs.iter().map(|c| &c.output_dir).collect();
    for (i, dir) in dirs.iter().enumerate() {
        if dirs[..i].contains(dir) {
            return Err(Error::InvalidConfig(format!(
                "sweep runs must write to distinct output dirs, {} repeats",
                dir.display()
            )));
        }
    }
    let first = sweep_comparable(&configs[0])?;
    for config in &configs[1..] {
        if sweep_comparable(config)? != first {
            return Err(Error::InvalidConfig(
                "sweep configs must differ only in generator label/endpoint and output dir".into(),
            ));
        }
    }

    fs::create_dir_all(sweep_dir).map_err(|e| Error::io(sweep_dir, e))?;
    let mut completed: Vec<(String, PipelineOutcome)> = Vec::new();
    let mut failures = Vec::new();
    for (config, label) in configs.iter().zip(&labels) {
        match run_zero_shot(config) {
            Ok(outcome) => completed.push((label.clone(), outcome)),
            Err(e) => failures.push(SweepFailure {
                label: label.clone(),
                error: e.to_string(),
            }),
        }
    }
    if completed.is_empty() {
        return Err(Error::InvalidInput(format!(
            "every sweep run failed; first: {}",
            failures[0].error
        )));
    }

    let metric_names: Vec<String> = completed[0].1.reports.keys().cloned().collect();
    let mut reports = BTreeMap::new();
    for name in &metric_names {
        let metric: Metric = name.parse()?;
        let mut methods = Vec::new();
        for (label, outcome) in &completed {
            let report = outcome.reports.get(name).ok_or_else(|| {
                Error::Eval(format!("run {label:?} is missing metric {name}"))
            })?;
            let per_dataset: BTreeMap<String, f64> = report
                .scores
                .iter()
                .map(|(dataset, row)| (dataset.clone(), row[label]))
                .collect();
            methods.push(MethodScores {
                method: label.clone(),
                per_dataset,
            });
        }
        let conventions = completed[0].1.reports[name].conventions;
        let report = EvalReport::build(metric, conventions, &methods)?;
        report.save(sweep_dir.join(format!("sweep-{name}.json")))?;
        write_text(
            &sweep_dir.join(format!("sweep-{name}.txt")),
            &report.format_table(),
        )?;
        let mut csv = String::from("label,dataset,score\n");
        for method in &methods {
            for (dataset, score) in &method.per_dataset {
                csv.push_str(&format!("{},{dataset},{score}\n", method.method));
            }
            csv.push_str(&format!(
                "{},average,{}\n",
                method.method, report.averages[&method.method]
            ));
        }
        write_text(&sweep_dir.join(format!("sweep-{name}.csv")), &csv)?;
        reports.insert(name.clone(), report);
    }
    let summary = serde_json::json!({
        "labels": labels,
        "completed": completed.iter().map(|(l, _)| l).collect::<Vec<_>>(),
        "failures": failures,
        "metrics": metric_names,
    });
    let mut summary_text = serde_json::to_string_pretty(&summary)?;
    summary_text.push('\n');
    write_text(&sweep_dir.join("sweep-summary.json"), &summary_text)?;
    Ok(SweepOutcome {
        reports,
        failures,
        labels,
    })
}

/// Re-derive train pairs from a pairs file, resolving llm pairs against the
/// corpus they were generated from. Used by the train/finetune subcommands.
pub fn train_pairs_from_files(
    pairs_path: impl AsRef<Path>,
    corpus_path: Option<&Path>,
) -> Result<(Vec<TrainPair>, usize)> {
    let pairs = load_pairs(pairs_path)?;
    let corpus = match corpus_path {
        Some(path) => load_corpus(path)?.documents,
        None => Vec::new(),
    };
    let (train_pairs, skipped) = pairs_from_synthetic(&pairs, &corpus);
    if train_pairs.is_empty() {
        return Err(Error::InvalidInput(
            "no usable training pairs (llm pairs need --corpus to resolve doc text)".into(),
        ));
    }
    Ok((train_pairs, skipped.len()))
}
