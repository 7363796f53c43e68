//! Flat key = value experiment config files.
//!
//! One assignment per line; `#` lines are comments; blank lines are
//! ignored. Nested sections use dotted keys (train.epochs, crop.ratio-min,
//! llm.endpoint-url, encoder.dim). `arm` and `source-dataset` are required;
//! everything else falls back to the built-in defaults. There is a single
//! `seed`: per-stage seeds are derived from it by name, so keys like
//! `train.seed` are rejected.
//!
//! ```text
//! arm = unsupervised-crop
//! source-dataset = data/source
//! output-dir = runs/crop
//! seed = 42
//! k-values = 10, 100
//! crop.ratio-min = 0.1
//! train.epochs = 10
//! ```
//!
//! Parsing checks syntax and key names only; semantic validation happens
//! when a command actually uses the config.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use crate::encoder::{Optimizer, Similarity};
use crate::error::{Error, Result};
use crate::pipeline::{Arm, ExperimentConfig};

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_named(&text, path)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_named(text, Path::new("<config>"))
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_named(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::parse(path, line, "expected `key = value`"));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::parse(path, line, "empty key"));
        }
        if value.is_empty() {
            return Err(Error::parse(path, line, format!("key {key:?} has an empty value")));
        }
        if key.ends_with(".seed") {
            return Err(Error::parse(
                path,
                line,
                format!("{key:?} is not settable: per-stage seeds derive from the root `seed`"),
            ));
        }
        if entries.insert(key.clone(), Entry { line, value }).is_some() {
            return Err(Error::parse(path, line, format!("key {key:?} appears twice")));
        }
    }

    let temperature_pinned = entries.contains_key("train.temperature");
    let mut take = |key: &str| entries.remove(key);
    let require = |field: &str, entry: Option<Entry>| {
        entry.ok_or_else(|| Error::InvalidConfig(format!("{}: missing required key {field:?}", path.display())))
    };

    fn typed<T: std::str::FromStr>(path: &Path, key: &str, entry: &Entry) -> Result<T>
    where
        T::Err: Display,
    {
        entry.value.parse().map_err(|e: T::Err| {
            Error::parse(path, entry.line, format!("key {key:?}: {e} (value {:?})", entry.value))
        })
    }

    let arm_entry = require("arm", take("arm"))?;
    let arm: Arm = typed(path, "arm", &arm_entry)?;
    let source = require("source-dataset", take("source-dataset"))?;
    let mut config = ExperimentConfig::new(arm, PathBuf::from(&source.value));

    if let Some(e) = take("target-dataset") {
        config.target_dataset = Some(PathBuf::from(e.value));
    }
    if let Some(e) = take("output-dir") {
        config.output_dir = PathBuf::from(e.value);
    }
    if let Some(e) = take("seed") {
        config.seed = typed(path, "seed", &e)?;
    }
    if let Some(e) = take("k-values") {
        let mut ks = Vec::new();
        for piece in e.value.split(',') {
            let piece = piece.trim();
            let k: usize = piece.parse().map_err(|_| {
                Error::parse(path, e.line, format!("k-values: bad integer {piece:?}"))
            })?;
            ks.push(k);
        }
        config.k_values = ks;
    }
    if let Some(e) = take("dev-size") {
        config.dev_size = typed(path, "dev-size", &e)?;
    }
    if let Some(e) = take("base-model") {
        config.base_model = Some(PathBuf::from(e.value));
    }
    if let Some(e) = take("label") {
        config.label = Some(e.value);
    }
    if let Some(e) = take("template") {
        config.template = Some(PathBuf::from(e.value));
    }

    if let Some(e) = take("encoder.buckets") {
        config.encoder.buckets = typed(path, "encoder.buckets", &e)?;
    }
    if let Some(e) = take("encoder.dim") {
        config.encoder.dim = typed(path, "encoder.dim", &e)?;
    }
    if let Some(e) = take("encoder.tied") {
        config.encoder.tied = typed(path, "encoder.tied", &e)?;
    }
    if let Some(e) = take("encoder.similarity") {
        let similarity: Similarity = typed(path, "encoder.similarity", &e)?;
        config.encoder.similarity = similarity;
        // the sensible temperature depends on the score scale, so follow
        // the similarity unless the file pins one explicitly
        if !temperature_pinned {
            config.train = crate::encoder::TrainConfig::for_similarity(similarity);
        }
    }

    if let Some(e) = take("train.batch-size") {
        config.train.batch_size = typed(path, "train.batch-size", &e)?;
    }
    if let Some(e) = take("train.epochs") {
        config.train.epochs = typed(path, "train.epochs", &e)?;
    }
    if let Some(e) = take("train.learning-rate") {
        config.train.learning_rate = typed(path, "train.learning-rate", &e)?;
    }
    if let Some(e) = take("train.temperature") {
        config.train.temperature = typed(path, "train.temperature", &e)?;
    }
    if let Some(e) = take("train.optimizer") {
        config.train.optimizer = match e.value.as_str() {
            "adam" => Optimizer::default_adam(),
            "sgd" => Optimizer::Sgd,
            other => {
                return Err(Error::parse(
                    path,
                    e.line,
                    format!("train.optimizer must be adam or sgd, got {other:?}"),
                ));
            }
        };
    }

    if let Some(e) = take("crop.ratio-min") {
        config.crop.ratio_min = typed(path, "crop.ratio-min", &e)?;
    }
    if let Some(e) = take("crop.ratio-max") {
        config.crop.ratio_max = typed(path, "crop.ratio-max", &e)?;
    }
    if let Some(e) = take("crop.deletion-prob") {
        config.crop.deletion_prob = typed(path, "crop.deletion-prob", &e)?;
    }
    if let Some(e) = take("crop.min-tokens") {
        config.crop.min_tokens = typed(path, "crop.min-tokens", &e)?;
    }

    if let Some(e) = take("llm.endpoint-url") {
        config.llm.endpoint_url = e.value;
    }
    if let Some(e) = take("llm.model-label") {
        config.llm.model_label = e.value;
    }
    if let Some(e) = take("llm.top-p") {
        config.llm.top_p = typed(path, "llm.top-p", &e)?;
    }
    if let Some(e) = take("llm.max-new-tokens") {
        config.llm.max_new_tokens = typed(path, "llm.max-new-tokens", &e)?;
    }
    if let Some(e) = take("llm.stop-sequences") {
        config.llm.stop_sequences = e.value.split(',').map(unescape).collect();
    }
    if let Some(e) = take("llm.timeout-ms") {
        config.llm.timeout_ms = typed(path, "llm.timeout-ms", &e)?;
    }
    if let Some(e) = take("llm.max-retries") {
        config.llm.max_retries = typed(path, "llm.max-retries", &e)?;
    }
    if let Some(e) = take("llm.concurrency") {
        config.llm.concurrency = typed(path, "llm.concurrency", &e)?;
    }

    if let Some((key, entry)) = entries.into_iter().next() {
        return Err(Error::parse(path, entry.line, format!("unknown key {key:?}")));
    }
    Ok(config)
}

/// `\n`, `\t`, `\\` in stop sequences; anything else passes through.
fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}
