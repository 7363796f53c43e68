//! Dataset types and file formats.
//!
//! Datasets follow the common retrieval layout: a `corpus.jsonl` of documents
//! (`_id`, `title`, `text` per line), a `queries.jsonl` (`_id`, `text`), and
//! tab-separated qrels files mapping query id and document id to a graded
//! relevance score. Synthetic query-document pairs live in their own JSONL
//! format defined here.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Document {
    /// Title and body joined for encoding; just the body when there is no title.
    pub fn full_text(&self) -> String {
        if self.title.trim().is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

/// Lowercased, whitespace-split tokens. Empty pieces are dropped, so every
/// token is non-empty; the sequence itself may be empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        TokenSequence { tokens }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens joined by single spaces.
    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join())
    }
}

/// Lowercase, split on Unicode whitespace, drop empty pieces. Punctuation
/// stays attached to its word.
pub fn tokenize(text: &str) -> TokenSequence {
    let tokens = text
        .to_lowercase()
        .split_whitespace()
        .map(|t| t.to_string())
        .collect();
    TokenSequence::new(tokens)
}

/// Where a synthetic query came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Crop,
    Llm,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Crop => f.write_str("crop"),
            Provenance::Llm => f.write_str("llm"),
        }
    }
}

/// One synthetic training example: a generated query tied to the document it
/// was generated from. `doc_text` carries the cropped document view when the
/// generator rewrote the document side as well; `None` means train against
/// the stored corpus text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SyntheticPair {
    pub query_id: String,
    pub query_text: String,
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_text: Option<String>,
    pub provenance: Provenance,
    pub generator_label: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

/// A malformed input line that was skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

pub struct CorpusLoad {
    pub documents: Vec<Document>,
    pub skipped: Vec<LineIssue>,
}

pub struct QueryLoad {
    pub queries: Vec<Query>,
    pub skipped: Vec<LineIssue>,
}

/// Read a JSONL corpus. Malformed lines (bad JSON, missing fields, blank
/// text, duplicate ids) are collected in `skipped`, not fatal; only an
/// unreadable file is.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut documents = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Document>(&line) {
            Ok(doc) => {
                if doc.id.is_empty() {
                    skipped.push(LineIssue {
                        line: lineno,
                        message: "empty _id".into(),
                    });
                } else if doc.text.trim().is_empty() {
                    skipped.push(LineIssue {
                        line: lineno,
                        message: format!("document {:?} has blank text", doc.id),
                    });
                } else if !seen.insert(doc.id.clone()) {
                    skipped.push(LineIssue {
                        line: lineno,
                        message: format!("duplicate _id {:?}", doc.id),
                    });
                } else {
                    documents.push(doc);
                }
            }
            Err(e) => skipped.push(LineIssue {
                line: lineno,
                message: e.to_string(),
            }),
        }
    }
    Ok(CorpusLoad { documents, skipped })
}

pub fn save_corpus(path: impl AsRef<Path>, documents: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in documents {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<QueryLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut queries = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Query>(&line) {
            Ok(q) if q.id.is_empty() => skipped.push(LineIssue {
                line: lineno,
                message: "empty _id".into(),
            }),
            Ok(q) if !seen.insert(q.id.clone()) => skipped.push(LineIssue {
                line: lineno,
                message: format!("duplicate _id {:?}", q.id),
            }),
            Ok(q) => queries.push(q),
            Err(e) => skipped.push(LineIssue {
                line: lineno,
                message: e.to_string(),
            }),
        }
    }
    Ok(QueryLoad { queries, skipped })
}

pub fn save_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in queries {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Graded relevance judgments, keyed by query id then document id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Duplicate (query, doc) pairs are rejected rather than overwritten.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, relevance: u32) -> Result<()> {
        let per_query = self.entries.entry(query_id.to_string()).or_default();
        if per_query.contains_key(doc_id) {
            return Err(Error::DuplicateQrel {
                query_id: query_id.to_string(),
                doc_id: doc_id.to_string(),
            });
        }
        per_query.insert(doc_id.to_string(), relevance);
        Ok(())
    }

    /// Relevance of a judged pair, or 0 for unjudged.
    pub fn relevance(&self, query_id: &str, doc_id: &str) -> u32 {
        self.entries
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.entries.contains_key(query_id)
    }

    /// Judged query ids, sorted.
    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.entries.get(query_id)
    }

    /// Documents judged relevant (score >= 1) for a query, sorted by id.
    pub fn relevant_docs(&self, query_id: &str) -> Vec<&str> {
        self.entries
            .get(query_id)
            .map(|m| {
                m.iter()
                    .filter(|(_, &rel)| rel >= 1)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn query_count(&self) -> usize {
        self.entries.len()
    }

    pub fn pair_count(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Read tab-separated qrels: `query-id<TAB>doc-id<TAB>score`. A leading
/// header row is tolerated. Non-integer or negative scores and duplicate
/// pairs are hard errors naming the offending line.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut qrels = Qrels::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let score = match fields[2].trim().parse::<i64>() {
            Ok(s) => s,
            Err(_) if lineno == 1 => continue, // header row
            Err(_) => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("non-integer score {:?}", fields[2]),
                ));
            }
        };
        if score < 0 {
            return Err(Error::parse(path, lineno, format!("negative score {score}")));
        }
        qrels
            .insert(fields[0].trim(), fields[1].trim(), score as u32)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(qrels)
}

pub fn save_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "query-id\tcorpus-id\tscore").map_err(|e| Error::io(path, e))?;
    for qid in qrels.query_ids() {
        for (did, rel) in qrels.judgments(qid).unwrap() {
            writeln!(w, "{qid}\t{did}\t{rel}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<SyntheticPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: SyntheticPair = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn save_pairs(path: impl AsRef<Path>, pairs: &[SyntheticPair]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Seeded split into (rest, dev). The dev set is the first `dev_size`
/// elements after a deterministic shuffle; everything else keeps shuffled
/// order. `dev_size` is clamped to the input length.
pub fn split_dev<T>(mut items: Vec<T>, dev_size: usize, seed: u64) -> (Vec<T>, Vec<T>) {
    use rand::seq::SliceRandom;
    let mut rng = substream(seed, "dev-split", 0);
    items.shuffle(&mut rng);
    let dev_size = dev_size.min(items.len());
    let rest = items.split_off(dev_size);
    (rest, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        let toks = tokenize("The  quick\tBrown FOX.\n");
        assert_eq!(toks.tokens(), ["the", "quick", "brown", "fox."]);
        assert!(tokenize("   \t\n").is_empty());
        assert_eq!(tokenize("Ünïcode  Spaces\u{a0}here").len(), 3);
    }

    #[test]
    fn full_text_joins_title_and_body() {
        let with_title = Document {
            id: "a".into(),
            title: "Color".into(),
            text: "hex codes".into(),
        };
        assert_eq!(with_title.full_text(), "Color hex codes");
        let no_title = Document {
            id: "b".into(),
            title: "".into(),
            text: "hex codes".into(),
        };
        assert_eq!(no_title.full_text(), "hex codes");
    }

    #[test]
    fn corpus_round_trip_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"_id": "d1", "title": "T", "text": "body one"}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        writeln!(f, r#"{{"_id": "d2", "text": "body two"}}"#).unwrap();
        writeln!(f, r#"{{"_id": "d2", "text": "dup"}}"#).unwrap();
        writeln!(f, r#"{{"_id": "d3", "text": "   "}}"#).unwrap();
        drop(f);

        let load = load_corpus(&path).unwrap();
        assert_eq!(load.documents.len(), 2);
        assert_eq!(load.documents[0].id, "d1");
        assert_eq!(load.documents[1].title, "");
        assert_eq!(load.skipped.len(), 3);
        assert_eq!(load.skipped[1].line, 4);
        assert!(load.skipped[1].message.contains("duplicate"));

        let out = dir.path().join("copy.jsonl");
        save_corpus(&out, &load.documents).unwrap();
        let reload = load_corpus(&out).unwrap();
        assert_eq!(reload.documents, load.documents);
        assert!(reload.skipped.is_empty());
    }

    #[test]
    fn qrels_parse_header_duplicates_and_scores() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.tsv");
        std::fs::write(&path, "query-id\tcorpus-id\tscore\nq1\td1\t2\nq1\td2\t0\nq2\td1\t1\n")
            .unwrap();
        let qrels = load_qrels(&path).unwrap();
        assert_eq!(qrels.relevance("q1", "d1"), 2);
        assert_eq!(qrels.relevance("q1", "d2"), 0);
        assert_eq!(qrels.relevance("q1", "missing"), 0);
        assert_eq!(qrels.relevant_docs("q1"), ["d1"]);
        assert_eq!(qrels.pair_count(), 3);

        std::fs::write(&path, "q1\td1\t1\nq1\td1\t2\n").unwrap();
        let err = load_qrels(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        assert!(err.contains("q1"), "{err}");

        std::fs::write(&path, "q1\td1\t1\nq2\td1\t-3\n").unwrap();
        let err = load_qrels(&path).unwrap_err().to_string();
        assert!(err.contains("negative"), "{err}");

        std::fs::write(&path, "q1\td1\t1\nq2\td1\tx\n").unwrap();
        let err = load_qrels(&path).unwrap_err().to_string();
        assert!(err.contains("non-integer"), "{err}");
    }

    #[test]
    fn qrels_round_trip() {
        let mut qrels = Qrels::new();
        qrels.insert("q2", "d9", 1).unwrap();
        qrels.insert("q1", "d1", 2).unwrap();
        qrels.insert("q1", "d3", 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels.tsv");
        save_qrels(&path, &qrels).unwrap();
        assert_eq!(load_qrels(&path).unwrap(), qrels);
    }

    #[test]
    fn pairs_round_trip_with_optionals() {
        let pairs = vec![
            SyntheticPair {
                query_id: "crop-d1".into(),
                query_text: "cropped words".into(),
                doc_id: "d1".into(),
                doc_text: Some("remaining words".into()),
                provenance: Provenance::Crop,
                generator_label: "crop".into(),
                config_hash: "abc123".into(),
                latency_ms: None,
            },
            SyntheticPair {
                query_id: "llm-d2".into(),
                query_text: "What is a hex code?".into(),
                doc_id: "d2".into(),
                doc_text: None,
                provenance: Provenance::Llm,
                generator_label: "mock-2.7b".into(),
                config_hash: "abc123".into(),
                latency_ms: Some(12.5),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        save_pairs(&path, &pairs).unwrap();
        assert_eq!(load_pairs(&path).unwrap(), pairs);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.contains("\"query-id\""));
        assert!(raw.contains("\"generator-label\""));
        assert!(!raw.lines().next().unwrap().contains("latency-ms"));
    }

    #[test]
    fn split_dev_is_seeded_and_disjoint() {
        let items: Vec<u32> = (0..100).collect();
        let (rest, dev) = split_dev(items.clone(), 10, 42);
        let (rest2, dev2) = split_dev(items.clone(), 10, 42);
        assert_eq!(dev, dev2);
        assert_eq!(rest, rest2);
        assert_eq!(dev.len(), 10);
        assert_eq!(rest.len(), 90);
        let mut all: Vec<u32> = dev.iter().chain(rest.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);

        let (_, dev3) = split_dev(items.clone(), 10, 43);
        assert_ne!(dev, dev3);

        let (rest4, dev4) = split_dev(items.clone(), 200, 1);
        assert!(rest4.is_empty());
        assert_eq!(dev4.len(), 100);
    }
}
