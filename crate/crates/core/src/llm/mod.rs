//! Prompted query generation.
//!
//! One completion per document: the prompt shows a few (document, question)
//! examples and ends with the target document, the endpoint continues with a
//! question. Blank completions and verbatim copies of example questions are
//! filtered out; everything is counted so lost-query rates can be reported.

mod backend;

pub use backend::{
    backend_for, truncate_at_stop, Completion, CompletionBackend, HttpBackend, MockBackend,
    API_KEY_VAR,
};

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Document, Provenance, SyntheticPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateExample {
    pub document: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PromptTemplate {
    pub document_label: String,
    pub question_label: String,
    pub examples: Vec<TemplateExample>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            document_label: "Document".into(),
            question_label: "Good question".into(),
            examples: vec![
                TemplateExample {
                    document: "The Nile flows north through eleven countries before emptying \
                               into the Mediterranean Sea, making it one of the longest rivers \
                               on Earth."
                        .into(),
                    question: "Which sea does the Nile empty into?".into(),
                },
                TemplateExample {
                    document: "A hash table stores key-value entries in an array of buckets, \
                               using a hash function to map each key to a bucket index in \
                               constant expected time."
                        .into(),
                    question: "How does a hash table locate the bucket for a key?".into(),
                },
                TemplateExample {
                    document: "Photosynthesis converts carbon dioxide and water into glucose \
                               and oxygen, using light energy captured by chlorophyll."
                        .into(),
                    question: "What does photosynthesis produce?".into(),
                },
            ],
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::InvalidConfig("template needs at least one example".into()));
        }
        if self.document_label.trim().is_empty() || self.question_label.trim().is_empty() {
            return Err(Error::InvalidConfig("template labels must be non-empty".into()));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.document.trim().is_empty() || ex.question.trim().is_empty() {
                return Err(Error::InvalidConfig(format!("template example {i} is blank")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let template: PromptTemplate = serde_json::from_str(&raw)?;
        template.validate()?;
        Ok(template)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenerationConfig {
    /// Nucleus sampling mass.
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub endpoint_url: String,
    /// Stamped into each pair as generator-label.
    pub model_label: String,
    pub timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_retries: u32,
    pub concurrency: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            top_p: 0.9,
            max_new_tokens: 64,
            stop_sequences: vec!["\n".into()],
            endpoint_url: String::new(),
            model_label: "unnamed-model".into(),
            timeout_ms: 30_000,
            seed: None,
            max_retries: 3,
            concurrency: 4,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig(format!("top-p {} outside (0, 1]", self.top_p)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max-new-tokens must be >= 1".into()));
        }
        if self.endpoint_url.trim().is_empty() {
            return Err(Error::InvalidConfig("endpoint-url is required".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::InvalidConfig("concurrency must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..6])
    }
}

/// Few-shot completion prompt: examples first, target document last, ending
/// right after the question label so the model continues with a question.
pub fn build_prompt(template: &PromptTemplate, doc: &Document) -> Result<String> {
    template.validate()?;
    let text = doc.full_text();
    if text.trim().is_empty() {
        return Err(Error::InvalidInput(format!("document {:?} is blank", doc.id)));
    }
    let mut prompt = String::new();
    for ex in &template.examples {
        prompt.push_str(&format!(
            "{}: {}\n{}: {}\n\n",
            template.document_label, ex.document, template.question_label, ex.question
        ));
    }
    prompt.push_str(&format!(
        "{}: {}\n{}:",
        template.document_label, text, template.question_label
    ));
    Ok(prompt)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Postprocess {
    Kept(String),
    Empty,
    PromptDuplicate,
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Classify a raw completion: blank, verbatim copy of an example question
/// (case and whitespace insensitive), or a kept query (trimmed).
pub fn postprocess(text: &str, template: &PromptTemplate) -> Postprocess {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Postprocess::Empty;
    }
    let norm = normalize(trimmed);
    for ex in &template.examples {
        if norm == normalize(&ex.question) {
            return Postprocess::PromptDuplicate;
        }
    }
    Postprocess::Kept(trimmed.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Sum of per-request latencies, not elapsed wall clock, so reruns of a
    /// deterministic backend report identical numbers.
    pub total_ms: f64,
}

impl LatencySummary {
    pub fn from_latencies(latencies: &[f64]) -> Self {
        if latencies.is_empty() {
            return LatencySummary {
                mean_ms: 0.0,
                p50_ms: 0.0,
                p95_ms: 0.0,
                total_ms: 0.0,
            };
        }
        let mut sorted = latencies.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let total: f64 = sorted.iter().sum();
        let nearest_rank = |q: f64| -> f64 {
            let n = sorted.len();
            let rank = (q * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        };
        LatencySummary {
            mean_ms: total / sorted.len() as f64,
            p50_ms: nearest_rank(0.50),
            p95_ms: nearest_rank(0.95),
            total_ms: total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenerationStats {
    pub total: usize,
    pub kept: usize,
    pub empty: usize,
    pub prompt_duplicate: usize,
    pub latencies_ms: LatencySummary,
}

impl GenerationStats {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// A document whose completion request failed after retries; rerunning with
/// the same checkpoint file retries exactly these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailedDoc {
    pub doc_id: String,
    pub reason: String,
}

pub struct LlmRun {
    pub pairs: Vec<SyntheticPair>,
    pub stats: GenerationStats,
    pub failed: Vec<FailedDoc>,
}

enum DocOutcome {
    Done(Postprocess, f64),
    Failed(String),
}

/// Generate one query per document through the backend chosen by the
/// endpoint URL.
pub fn generate_corpus(
    docs: &[Document],
    template: &PromptTemplate,
    config: &GenerationConfig,
    checkpoint: Option<&Path>,
) -> Result<LlmRun> {
    let backend = backend_for(config)?;
    generate_corpus_with(docs, template, config, backend.as_ref(), checkpoint)
}

/// Same as generate_corpus with an explicit backend.
///
/// Fan-out is bounded by config.concurrency. Results are keyed by document
/// index, so pair order and stats never depend on scheduling. Documents
/// listed in the checkpoint file are skipped; ids of newly completed
/// documents are appended to it as they finish (failed ones are not, so a
/// rerun retries them).
pub fn generate_corpus_with(
    docs: &[Document],
    template: &PromptTemplate,
    config: &GenerationConfig,
    backend: &dyn CompletionBackend,
    checkpoint: Option<&Path>,
) -> Result<LlmRun> {
    template.validate()?;
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::InvalidInput("no documents to generate from".into()));
    }

    let mut done: HashSet<String> = HashSet::new();
    if let Some(path) = checkpoint {
        if path.exists() {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if !line.trim().is_empty() {
                    done.insert(line.trim().to_string());
                }
            }
        }
    }
    let mut checkpoint_file = match checkpoint {
        Some(path) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        ),
        None => None,
    };

    let tasks: Vec<(usize, &Document)> = docs
        .iter()
        .enumerate()
        .filter(|(_, d)| !done.contains(&d.id))
        .collect();
    let mut outcomes: BTreeMap<usize, DocOutcome> = BTreeMap::new();

    if !tasks.is_empty() {
        let cursor = AtomicUsize::new(0);
        let workers = config.concurrency.min(tasks.len());
        let (tx, rx) = mpsc::channel::<(usize, DocOutcome)>();
        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..workers {
                let tx = tx.clone();
                let cursor = &cursor;
                let tasks = &tasks;
                scope.spawn(move || loop {
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    if i >= tasks.len() {
                        break;
                    }
                    let (idx, doc) = tasks[i];
                    let outcome = match build_prompt(template, doc)
                        .and_then(|prompt| backend.complete(&prompt, config))
                    {
                        Ok(c) => DocOutcome::Done(postprocess(&c.text, template), c.latency_ms),
                        Err(e) => DocOutcome::Failed(e.to_string()),
                    };
                    if tx.send((idx, outcome)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for _ in 0..tasks.len() {
                let (idx, outcome) = rx
                    .recv()
                    .map_err(|_| Error::InvalidInput("generation worker died".into()))?;
                if let (Some(file), DocOutcome::Done(..)) = (checkpoint_file.as_mut(), &outcome) {
                    writeln!(file, "{}", docs[idx].id)
                        .map_err(|e| Error::io(checkpoint.unwrap(), e))?;
                    file.flush().map_err(|e| Error::io(checkpoint.unwrap(), e))?;
                }
                outcomes.insert(idx, outcome);
            }
            Ok(())
        })?;
    }

    let config_hash = config.hash();
    let mut pairs = Vec::new();
    let mut failed = Vec::new();
    let mut latencies = Vec::new();
    let (mut kept, mut empty, mut dup) = (0usize, 0usize, 0usize);
    for (idx, outcome) in outcomes {
        let doc = &docs[idx];
        match outcome {
            DocOutcome::Done(post, latency) => {
                latencies.push(latency);
                match post {
                    Postprocess::Kept(query) => {
                        kept += 1;
                        pairs.push(SyntheticPair {
                            query_id: format!("llm-{}", doc.id),
                            query_text: query,
                            doc_id: doc.id.clone(),
                            doc_text: None,
                            provenance: Provenance::Llm,
                            generator_label: config.model_label.clone(),
                            config_hash: config_hash.clone(),
                            latency_ms: Some(latency),
                        });
                    }
                    Postprocess::Empty => empty += 1,
                    Postprocess::PromptDuplicate => dup += 1,
                }
            }
            DocOutcome::Failed(reason) => failed.push(FailedDoc {
                doc_id: doc.id.clone(),
                reason,
            }),
        }
    }

    Ok(LlmRun {
        pairs,
        stats: GenerationStats {
            total: kept + empty + dup,
            kept,
            empty,
            prompt_duplicate: dup,
            latencies_ms: LatencySummary::from_latencies(&latencies),
        },
        failed,
    })
}

/// Distribution of query-opening words: share of queries whose first word is
/// each entry, descending, ties broken by word. Grouping is case-insensitive;
/// the most common original casing is reported.
pub fn starting_word_report(pairs: &[SyntheticPair], top_n: usize) -> Result<Vec<(String, f64)>> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs to report on".into()));
    }
    let mut groups: BTreeMap<String, (usize, BTreeMap<String, usize>)> = BTreeMap::new();
    let mut total = 0usize;
    for pair in pairs {
        let Some(first) = pair.query_text.split_whitespace().next() else {
            continue;
        };
        total += 1;
        let entry = groups.entry(first.to_lowercase()).or_default();
        entry.0 += 1;
        *entry.1.entry(first.to_string()).or_default() += 1;
    }
    if total == 0 {
        return Err(Error::InvalidInput("all pair queries are blank".into()));
    }
    let mut rows: Vec<(String, usize)> = groups
        .into_values()
        .map(|(count, casings)| {
            let word = casings
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(w, _)| w.clone())
                .unwrap();
            (word, count)
        })
        .collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(rows
        .into_iter()
        .take(top_n)
        .map(|(w, c)| (w, 100.0 * c as f64 / total as f64))
        .collect())
}
