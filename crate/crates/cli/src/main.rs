//! synquery command line: each subcommand is one pipeline stage, plus `run`
//! for a whole experiment arm driven by a config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use synquery::corpus::{load_corpus, load_qrels, load_queries, split_dev};
use synquery::encoder::io::{load_model, save_model};
use synquery::encoder::{finetune, train, DevSet, EncoderModel, EncoderParams, TrainConfig};
use synquery::eval::{evaluate_run, EvalConventions, EvalReport, GainFunction, Metric};
use synquery::index::{read_run_file, write_run_file, DenseIndex};
use synquery::llm::{GenerationConfig, PromptTemplate};
use synquery::pipeline::{
    self, analyze, checkpoint_sweep, load_config, resolve_datasets, stage_seed, Arm,
    ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "synquery", version, about = "Synthetic-query retrieval lab")]
struct Cli {
    /// Experiment config file (flat key = value)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config output directory
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset directory (or a parent of several) and print counts
    Ingest {
        /// Dataset directory containing corpus.jsonl, queries.jsonl, qrels/
        dir: PathBuf,
        /// Qrels split to check
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Generate query-document pairs by cropping document spans
    GenCrop {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// Output pairs file (jsonl)
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Generate query-document pairs through a completion endpoint
    GenLlm {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// Output pairs file (jsonl); stats land next to it
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Few-shot template file (json); omit for the built-in default
        #[arg(long, value_name = "FILE")]
        template: Option<PathBuf>,
        /// Completion endpoint (http[s]:// or mock://)
        #[arg(long, value_name = "URL")]
        endpoint: Option<String>,
        /// Resume file: completed doc ids, one per line
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Train an encoder from scratch on a pairs file
    Train {
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        /// Corpus for resolving document text of llm pairs
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        /// Output model file
        #[arg(long, value_name = "FILE")]
        model_out: PathBuf,
        /// Pairs held out as the dev set
        #[arg(long)]
        dev_size: Option<usize>,
    },
    /// Continue training an existing model on new pairs
    Finetune {
        /// Starting model
        #[arg(long, value_name = "FILE")]
        base: PathBuf,
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        #[arg(long, value_name = "FILE")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model_out: PathBuf,
        #[arg(long)]
        dev_size: Option<usize>,
    },
    /// Encode a corpus into a dense index
    Index {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// Output index file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Rank the top-k documents for each query
    Search {
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Output run file (tsv: query, doc, rank, score)
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score a run file against relevance judgments
    Eval {
        #[arg(long, value_name = "FILE")]
        run: PathBuf,
        #[arg(long, value_name = "FILE")]
        qrels: PathBuf,
        /// Metric such as ndcg@10 or recall@100; repeatable
        #[arg(long, value_name = "METRIC", default_values_t = [String::from("ndcg@10"), String::from("recall@100")])]
        metric: Vec<String>,
        /// Gain function for ndcg: linear or exponential
        #[arg(long, default_value = "linear")]
        gain: String,
        /// Drop queries whose judgments list no relevant document
        #[arg(long)]
        skip_queries_without_relevant: bool,
    },
    /// Run one experiment arm end to end (requires --config)
    Run,
    /// Compare generator checkpoints: one unsupervised run per config file
    Sweep {
        /// Config files, one per checkpoint label
        #[arg(required = true, value_name = "CONFIG")]
        configs: Vec<PathBuf>,
        /// Directory for the comparison tables
        #[arg(long, value_name = "DIR", default_value = "runs/sweep")]
        sweep_dir: PathBuf,
    },
    /// Summarize a generation run: lost questions, starting words, timing
    Analyze {
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        #[arg(long, value_name = "FILE")]
        stats: PathBuf,
        /// Directory for analysis.json and the csv tables
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Render a saved evaluation report as an aligned table
    Report {
        /// Report file written by run or sweep
        report: PathBuf,
        /// Also write the table to this file
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

/// Config resolution shared by the stage subcommands: file if given,
/// defaults otherwise, then the global flag overrides.
fn effective_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        // Stage subcommands work without a config file; arm/source are
        // placeholders that only `run` validates.
        None => ExperimentConfig::new(Arm::UnsupervisedCrop, "."),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Ingest { dir, split } => cmd_ingest(dir, split),
        Command::GenCrop { corpus, out } => cmd_gen_crop(&cli, corpus, out),
        Command::GenLlm {
            corpus,
            out,
            template,
            endpoint,
            checkpoint,
        } => cmd_gen_llm(
            &cli,
            corpus,
            out,
            template.as_deref(),
            endpoint.as_deref(),
            checkpoint.as_deref(),
        ),
        Command::Train {
            pairs,
            corpus,
            model_out,
            dev_size,
        } => cmd_train(&cli, pairs, corpus.as_deref(), model_out, *dev_size),
        Command::Finetune {
            base,
            pairs,
            corpus,
            model_out,
            dev_size,
        } => cmd_finetune(&cli, base, pairs, corpus.as_deref(), model_out, *dev_size),
        Command::Index { model, corpus, out } => cmd_index(model, corpus, out),
        Command::Search {
            index,
            model,
            queries,
            k,
            out,
        } => cmd_search(index, model, queries, *k, out),
        Command::Eval {
            run,
            qrels,
            metric,
            gain,
            skip_queries_without_relevant,
        } => cmd_eval(run, qrels, metric, gain, *skip_queries_without_relevant),
        Command::Run => cmd_run(&cli),
        Command::Sweep { configs, sweep_dir } => cmd_sweep(&cli, configs, sweep_dir),
        Command::Analyze {
            pairs,
            stats,
            out_dir,
        } => cmd_analyze(pairs, stats, out_dir.as_deref()),
        Command::Report { report, out } => cmd_report(report, out.as_deref()),
    }
}

fn cmd_ingest(dir: &Path, split: &str) -> anyhow::Result<()> {
    let datasets = resolve_datasets(dir)?;
    for ds in &datasets {
        let corpus = ds.load_corpus()?;
        let queries = ds.load_queries()?;
        let qrels = ds.load_qrels(split)?;
        println!(
            "{}: {} docs ({} skipped), {} queries ({} skipped), {} {} judgments over {} queries",
            ds.name,
            corpus.documents.len(),
            corpus.skipped.len(),
            queries.queries.len(),
            queries.skipped.len(),
            qrels.pair_count(),
            split,
            qrels.query_count(),
        );
        for issue in corpus.skipped.iter().chain(queries.skipped.iter()).take(5) {
            println!("  skipped line {}: {}", issue.line, issue.message);
        }
    }
    println!("{} dataset(s) ok", datasets.len());
    Ok(())
}

fn cmd_gen_crop(cli: &Cli, corpus: &Path, out: &Path) -> anyhow::Result<()> {
    let config = effective_config(cli)?;
    let mut crop = config.crop.clone();
    crop.seed = stage_seed(config.seed, "seed:generate");
    let docs = load_corpus(corpus)?.documents;
    let run = synquery::crop::generate_corpus(&docs, &crop)?;
    synquery::corpus::save_pairs(out, &run.pairs)?;
    println!(
        "{} pairs from {} docs ({} empty docs skipped) -> {}",
        run.pairs.len(),
        docs.len(),
        run.lost.len(),
        out.display()
    );
    Ok(())
}

fn cmd_gen_llm(
    cli: &Cli,
    corpus: &Path,
    out: &Path,
    template: Option<&Path>,
    endpoint: Option<&str>,
    checkpoint: Option<&Path>,
) -> anyhow::Result<()> {
    let config = effective_config(cli)?;
    let mut gen: GenerationConfig = config.llm.clone();
    gen.seed = Some(stage_seed(config.seed, "seed:generate"));
    if let Some(url) = endpoint {
        gen.endpoint_url = url.to_string();
    }
    if gen.endpoint_url.is_empty() {
        bail!("no endpoint: pass --endpoint or set llm.endpoint-url in the config");
    }
    let template = match template.or(config.template.as_deref()) {
        Some(path) => PromptTemplate::load(path)?,
        None => PromptTemplate::default(),
    };
    let docs = load_corpus(corpus)?.documents;
    let run = synquery::llm::generate_corpus(&docs, &template, &gen, checkpoint)?;
    synquery::corpus::save_pairs(out, &run.pairs)?;
    let stats_path = out.with_extension("stats.json");
    run.stats.save(&stats_path)?;
    println!(
        "{} kept / {} total ({} empty, {} prompt-duplicate, {} failed) -> {}",
        run.stats.kept,
        run.stats.total,
        run.stats.empty,
        run.stats.prompt_duplicate,
        run.failed.len(),
        out.display()
    );
    println!("stats -> {}", stats_path.display());
    for f in run.failed.iter().take(5) {
        println!("  failed {}: {}", f.doc_id, f.reason);
    }
    Ok(())
}

/// Shared ending for train/finetune: report, snapshot, save.
fn finish_training(
    state: synquery::encoder::TrainState,
    config_used: &TrainConfig,
    params: &EncoderParams,
    model_out: &Path,
) -> anyhow::Result<()> {
    let snapshot = serde_json::json!({
        "encoder": params,
        "train": config_used,
        "best-epoch": state.best_epoch,
        "best-dev-ndcg10": state.best_dev_ndcg10,
        "initial-dev-ndcg10": state.initial_dev_ndcg10,
    });
    save_model(model_out, &state.best_model, &snapshot.to_string())?;
    println!(
        "dev ndcg@10 {:.4} -> {:.4} (best at epoch {} of {})",
        state.initial_dev_ndcg10, state.best_dev_ndcg10, state.best_epoch, state.epochs_completed
    );
    println!("model -> {}", model_out.display());
    Ok(())
}

fn cmd_train(
    cli: &Cli,
    pairs: &Path,
    corpus: Option<&Path>,
    model_out: &Path,
    dev_size: Option<usize>,
) -> anyhow::Result<()> {
    let config = effective_config(cli)?;
    let (all_pairs, skipped) = pipeline::train_pairs_from_files(pairs, corpus)?;
    if skipped > 0 {
        println!("{skipped} pairs skipped (unresolvable doc text)");
    }
    let dev_size = dev_size.unwrap_or(config.dev_size);
    if all_pairs.len() <= dev_size {
        bail!(
            "{} pairs cannot spare {} for dev; lower --dev-size",
            all_pairs.len(),
            dev_size
        );
    }
    let (train_pairs, dev_pairs) =
        split_dev(all_pairs, dev_size, stage_seed(config.seed, "seed:dev-split"));
    let dev = DevSet::from_pairs(&dev_pairs)?;

    let mut params = config.encoder;
    params.seed = stage_seed(config.seed, "seed:init");
    let mut train_config = config.train.clone();
    train_config.seed = stage_seed(config.seed, "seed:train");
    let model = EncoderModel::new(params)?;
    let state = train(model, &train_pairs, &dev, &train_config)?;
    finish_training(state, &train_config, &params, model_out)
}

fn cmd_finetune(
    cli: &Cli,
    base: &Path,
    pairs: &Path,
    corpus: Option<&Path>,
    model_out: &Path,
    dev_size: Option<usize>,
) -> anyhow::Result<()> {
    let config = effective_config(cli)?;
    let (base_model, _snapshot) = load_model(base)?;
    let (all_pairs, skipped) = pipeline::train_pairs_from_files(pairs, corpus)?;
    if skipped > 0 {
        println!("{skipped} pairs skipped (unresolvable doc text)");
    }
    let mut train_config = config.train.clone();
    train_config.seed = stage_seed(config.seed, "seed:train");
    let params = base_model.params();
    let state = finetune(
        &base_model,
        all_pairs,
        &train_config,
        dev_size.unwrap_or(config.dev_size),
    )?;
    finish_training(state, &train_config, &params, model_out)
}

fn cmd_index(model: &Path, corpus: &Path, out: &Path) -> anyhow::Result<()> {
    let (model, _) = load_model(model)?;
    let docs = load_corpus(corpus)?.documents;
    let build = DenseIndex::build(&model, &docs)?;
    build.index.save(out)?;
    println!(
        "{} docs indexed ({} empty skipped), dim {}, {} -> {}",
        build.index.len(),
        build.skipped.len(),
        build.index.dim(),
        build.index.similarity(),
        out.display()
    );
    Ok(())
}

fn cmd_search(
    index: &Path,
    model: &Path,
    queries: &Path,
    k: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let index = DenseIndex::load(index)?;
    let (model, _) = load_model(model)?;
    let queries = load_queries(queries)?.queries;
    let outcome = index.batch_search(&model, &queries, k)?;
    write_run_file(out, &outcome.rankings)?;
    println!(
        "{} queries ranked, top {} -> {}",
        outcome.rankings.len(),
        k,
        out.display()
    );
    for failure in outcome.failures.iter().take(5) {
        println!("  unranked {}: {}", failure.query_id, failure.reason);
    }
    if !outcome.failures.is_empty() {
        println!("{} queries produced no ranking", outcome.failures.len());
    }
    Ok(())
}

fn cmd_eval(
    run: &Path,
    qrels: &Path,
    metrics: &[String],
    gain: &str,
    skip_no_relevant: bool,
) -> anyhow::Result<()> {
    let rankings = read_run_file(run)?;
    let qrels = load_qrels(qrels)?;
    let conventions = EvalConventions {
        gain: match gain {
            "linear" => GainFunction::Linear,
            "exponential" => GainFunction::Exponential,
            other => bail!("unknown gain {other:?}: expected linear or exponential"),
        },
        skip_queries_without_relevant: skip_no_relevant,
    };
    for name in metrics {
        let metric: Metric = name.parse()?;
        let score = evaluate_run(&rankings, &qrels, metric, &conventions)?;
        println!(
            "{metric} {:.4} ({} queries{})",
            score.value,
            score.evaluated,
            if score.skipped_no_relevant > 0 {
                format!(", {} skipped without relevant docs", score.skipped_no_relevant)
            } else {
                String::new()
            }
        );
    }
    Ok(())
}

fn cmd_run(cli: &Cli) -> anyhow::Result<()> {
    if cli.config.is_none() {
        bail!("run needs --config <file>");
    }
    let config = effective_config(cli)?;
    let outcome = pipeline::run(&config)?;
    let train = &outcome.train;
    println!(
        "dev ndcg@10 {:.4} -> {:.4} (best at epoch {} of {})",
        train.initial_dev_ndcg10, train.best_dev_ndcg10, train.best_epoch, train.epochs_completed
    );
    for (name, report) in &outcome.reports {
        println!("\n{name}");
        print!("{}", report.format_table());
    }
    println!("\nartifacts -> {}", config.output_dir.display());
    Ok(())
}

fn cmd_sweep(cli: &Cli, config_paths: &[PathBuf], sweep_dir: &Path) -> anyhow::Result<()> {
    let mut configs = Vec::new();
    for path in config_paths {
        let config =
            load_config(path).with_context(|| format!("sweep config {}", path.display()))?;
        configs.push(config);
    }
    if let Some(seed) = cli.seed {
        for config in &mut configs {
            config.seed = seed;
        }
    }
    let outcome = checkpoint_sweep(&configs, sweep_dir)?;
    for failure in &outcome.failures {
        println!("failed {}: {}", failure.label, failure.error);
    }
    for (name, report) in &outcome.reports {
        println!("\n{name}");
        print!("{}", report.format_table());
    }
    println!("\ntables -> {}", sweep_dir.display());
    Ok(())
}

fn cmd_analyze(pairs: &Path, stats: &Path, out_dir: Option<&Path>) -> anyhow::Result<()> {
    let report = analyze(pairs, stats)?;
    println!(
        "{} generated: {} kept, {} empty, {} prompt-duplicate ({:.4}% lost)",
        report.total, report.kept, report.empty, report.prompt_duplicate, report.lost_percent
    );
    println!(
        "latency ms: mean {:.1}, p50 {:.1}, p95 {:.1}",
        report.timing.mean_ms, report.timing.p50_ms, report.timing.p95_ms
    );
    println!("top starting words:");
    for word in &report.starting_words {
        println!("  {:<12} {:>6.2}%", word.word, word.percent);
    }
    println!("  {:<12} {:>6.2}% total", "", report.starting_words_total_percent);
    if let Some(dir) = out_dir {
        report.write_dir(dir)?;
        println!("tables -> {}", dir.display());
    }
    Ok(())
}

fn cmd_report(report: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let report = EvalReport::load(report)?;
    let table = report.format_table();
    print!("{table}");
    if let Some(path) = out {
        std::fs::write(path, &table).with_context(|| path.display().to_string())?;
        println!("table -> {}", path.display());
    }
    Ok(())
}
