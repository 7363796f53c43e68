//! Synthetic two-domain datasets for tests and walkthroughs.
//!
//! Two BEIR-style dataset directories with strictly disjoint vocabularies,
//! so a model trained on the source has seen none of the target's tokens
//! and domain adaptation has real headroom. Gold queries are token subsets
//! of their documents, giving training a learnable signal and evaluation an
//! unambiguous relevant document.

use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{save_corpus, save_qrels, save_queries, Document, Qrels, Query};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyConfig {
    pub source_docs: usize,
    pub target_docs: usize,
    /// Source-side gold training queries (the supervised arm's data).
    pub train_queries: usize,
    /// Test queries per dataset.
    pub test_queries: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            source_docs: 5000,
            target_docs: 2000,
            train_queries: 1000,
            test_queries: 200,
            seed: 0,
        }
    }
}

pub struct ToyPaths {
    pub source: PathBuf,
    pub target: PathBuf,
}

const SOURCE_SYLLABLES: [&str; 10] =
    ["ba", "de", "ri", "ko", "mu", "sa", "ti", "lo", "ne", "pa"];
const TARGET_SYLLABLES: [&str; 10] =
    ["zu", "fe", "gi", "vo", "wy", "qa", "xi", "ju", "hy", "ce"];
const VOCAB_SIZE: usize = 600;
const DOC_TOKENS: std::ops::RangeInclusive<usize> = 20..=60;
const QUERY_TOKENS: std::ops::RangeInclusive<usize> = 3..=5;

/// All 2- then 3-syllable concatenations, in enumeration order. Disjoint
/// syllable sets make the two domains' vocabularies disjoint.
fn vocabulary(syllables: &[&str]) -> Vec<String> {
    let mut words = Vec::with_capacity(VOCAB_SIZE);
    'outer: for count in [2usize, 3] {
        let combos = syllables.len().pow(count as u32);
        for i in 0..combos {
            let mut word = String::new();
            let mut rest = i;
            for _ in 0..count {
                word.push_str(syllables[rest % syllables.len()]);
                rest /= syllables.len();
            }
            words.push(word);
            if words.len() == VOCAB_SIZE {
                break 'outer;
            }
        }
    }
    words
}

fn doc_text(vocab: &[String], weights: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(DOC_TOKENS);
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        tokens.push(vocab[weights.sample(rng)].as_str());
    }
    tokens.join(" ")
}

/// A query is a small, order-preserving sample of its document's tokens.
fn query_text(doc: &Document, rng: &mut ChaCha8Rng) -> String {
    let tokens: Vec<&str> = doc.text.split_whitespace().collect();
    let want = rng.random_range(QUERY_TOKENS).min(tokens.len());
    let picked = rand::seq::index::sample(rng, tokens.len(), want);
    let mut indices: Vec<usize> = picked.into_iter().collect();
    indices.sort_unstable();
    indices.iter().map(|&i| tokens[i]).collect::<Vec<_>>().join(" ")
}

struct Domain {
    name: &'static str,
    docs: usize,
    train_queries: usize,
    test_queries: usize,
    syllables: &'static [&'static str],
}

fn build_domain(root: &Path, domain: &Domain, seed: u64) -> Result<PathBuf> {
    let dir = root.join(domain.name);
    std::fs::create_dir_all(dir.join("qrels")).map_err(|e| Error::io(&dir, e))?;

    let vocab = vocabulary(domain.syllables);
    // Zipf-ish: a few frequent words, a long tail
    let weights = WeightedIndex::new((0..vocab.len()).map(|i| 1.0 / (i + 1) as f64))
        .map_err(|e| Error::InvalidInput(format!("bad vocabulary weights: {e}")))?;

    let mut docs = Vec::with_capacity(domain.docs);
    for i in 0..domain.docs {
        let mut rng = substream(seed, &format!("toy-{}-doc", domain.name), i as u64);
        docs.push(Document {
            id: format!("{}-d{i}", domain.name),
            title: String::new(),
            text: doc_text(&vocab, &weights, &mut rng),
        });
    }

    // test queries ask about the first docs, train queries about the next
    // block, so the two splits never share a relevant document
    let need = domain.test_queries + domain.train_queries;
    if need > domain.docs {
        return Err(Error::InvalidConfig(format!(
            "domain {} needs {need} query docs but has {}",
            domain.name, domain.docs
        )));
    }
    let mut queries = Vec::new();
    let mut test_qrels = Qrels::new();
    let mut train_qrels = Qrels::new();
    for i in 0..domain.test_queries {
        let mut rng = substream(seed, &format!("toy-{}-test-query", domain.name), i as u64);
        let qid = format!("{}-test-q{i}", domain.name);
        queries.push(Query {
            id: qid.clone(),
            text: query_text(&docs[i], &mut rng),
        });
        test_qrels.insert(&qid, &docs[i].id, 1)?;
    }
    for i in 0..domain.train_queries {
        let mut rng = substream(seed, &format!("toy-{}-train-query", domain.name), i as u64);
        let doc = &docs[domain.test_queries + i];
        let qid = format!("{}-train-q{i}", domain.name);
        queries.push(Query {
            id: qid.clone(),
            text: query_text(doc, &mut rng),
        });
        train_qrels.insert(&qid, &doc.id, 1)?;
    }

    save_corpus(dir.join("corpus.jsonl"), &docs)?;
    save_queries(dir.join("queries.jsonl"), &queries)?;
    save_qrels(dir.join("qrels").join("test.tsv"), &test_qrels)?;
    save_qrels(dir.join("qrels").join("train.tsv"), &train_qrels)?;
    Ok(dir)
}

/// Write source/ and target/ dataset directories under `root`.
pub fn generate(root: impl AsRef<Path>, config: &ToyConfig) -> Result<ToyPaths> {
    let root = root.as_ref();
    if config.source_docs == 0 || config.target_docs == 0 {
        return Err(Error::InvalidConfig("toy domains need at least one document".into()));
    }
    let source = build_domain(
        root,
        &Domain {
            name: "source",
            docs: config.source_docs,
            train_queries: config.train_queries,
            test_queries: config.test_queries,
            syllables: &SOURCE_SYLLABLES,
        },
        config.seed,
    )?;
    let target = build_domain(
        root,
        &Domain {
            name: "target",
            docs: config.target_docs,
            // target gold queries exist only for evaluation
            train_queries: 0,
            test_queries: config.test_queries,
            syllables: &TARGET_SYLLABLES,
        },
        config.seed,
    )?;
    Ok(ToyPaths { source, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, load_qrels, load_queries, tokenize};
    use std::collections::HashSet;

    fn small() -> ToyConfig {
        ToyConfig {
            source_docs: 40,
            target_docs: 30,
            train_queries: 10,
            test_queries: 5,
            seed: 3,
        }
    }

    #[test]
    fn domains_have_disjoint_vocabularies() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate(dir.path(), &small()).unwrap();
        let collect = |p: &Path| -> HashSet<String> {
            load_corpus(p.join("corpus.jsonl"))
                .unwrap()
                .documents
                .iter()
                .flat_map(|d| tokenize(&d.text).tokens().to_vec())
                .collect()
        };
        let source_vocab = collect(&paths.source);
        let target_vocab = collect(&paths.target);
        assert!(!source_vocab.is_empty() && !target_vocab.is_empty());
        assert!(source_vocab.is_disjoint(&target_vocab));
    }

    #[test]
    fn queries_are_subsets_of_their_relevant_doc() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate(dir.path(), &small()).unwrap();
        let docs = load_corpus(paths.source.join("corpus.jsonl")).unwrap().documents;
        let queries = load_queries(paths.source.join("queries.jsonl")).unwrap().queries;
        let qrels = load_qrels(paths.source.join("qrels").join("test.tsv")).unwrap();
        assert_eq!(qrels.query_count(), 5);
        for qid in qrels.query_ids() {
            let query = queries.iter().find(|q| q.id == qid).unwrap();
            let docid = qrels.relevant_docs(qid)[0];
            let doc = docs.iter().find(|d| d.id == docid).unwrap();
            let doc_tokens: HashSet<_> =
                tokenize(&doc.text).tokens().iter().cloned().collect();
            for token in tokenize(&query.text).tokens() {
                assert!(doc_tokens.contains(token), "{token} not in {docid}");
            }
        }
    }

    #[test]
    fn train_and_test_relevant_docs_never_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let paths = generate(dir.path(), &small()).unwrap();
        let test = load_qrels(paths.source.join("qrels").join("test.tsv")).unwrap();
        let train = load_qrels(paths.source.join("qrels").join("train.tsv")).unwrap();
        let test_docs: HashSet<&str> = test
            .query_ids()
            .flat_map(|q| test.relevant_docs(q))
            .collect();
        let train_docs: HashSet<&str> = train
            .query_ids()
            .flat_map(|q| train.relevant_docs(q))
            .collect();
        assert_eq!(train.query_count(), 10);
        assert!(test_docs.is_disjoint(&train_docs));
    }

    #[test]
    fn generation_is_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate(dir_a.path(), &small()).unwrap();
        generate(dir_b.path(), &small()).unwrap();
        for rel in [
            "source/corpus.jsonl",
            "source/queries.jsonl",
            "source/qrels/test.tsv",
            "target/corpus.jsonl",
        ] {
            let a = std::fs::read(dir_a.path().join(rel)).unwrap();
            let b = std::fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between generations");
        }
    }
}
