//! Contrastive training with per-epoch dev selection.
//!
//! Each epoch shuffles the pairs (seeded), steps the optimizer per batch,
//! then scores dev nDCG@10 by retrieving over the dev pairs' document pool.
//! The returned state carries both the final parameters and the snapshot
//! from the best dev epoch; the untrained model counts as epoch 0, so zero
//! epochs is a no-op that still reports a dev score.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Document, Qrels, Query, SyntheticPair, TokenSequence};
use crate::encoder::loss::{loss_gradient, BatchRef, Gradient};
use crate::encoder::{EncoderModel, Similarity, Tower};
use crate::error::{Error, Result};
use crate::eval::ndcg_at_k;
use crate::index::DenseIndex;
use crate::rng::substream;

pub const DEV_NDCG_K: usize = 10;

/// One training example, already tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPair {
    pub query_id: String,
    pub query: TokenSequence,
    pub doc_id: String,
    pub doc: TokenSequence,
}

impl TrainPair {
    pub fn new(query_id: &str, query_text: &str, doc_id: &str, doc_text: &str) -> Result<Self> {
        let query = tokenize(query_text);
        let doc = tokenize(doc_text);
        if query.is_empty() || doc.is_empty() {
            return Err(Error::InvalidInput(format!(
                "pair {query_id:?}/{doc_id:?} has an empty side"
            )));
        }
        Ok(TrainPair {
            query_id: query_id.to_string(),
            query,
            doc_id: doc_id.to_string(),
            doc,
        })
    }
}

/// Resolve synthetic pairs against a corpus: the document side is the pair's
/// own synthetic text when present, otherwise the corpus text. Pairs whose
/// document is missing or whose sides tokenize to nothing are skipped and
/// their query ids returned.
pub fn pairs_from_synthetic(
    pairs: &[SyntheticPair],
    corpus: &[Document],
) -> (Vec<TrainPair>, Vec<String>) {
    let by_id: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut out = Vec::with_capacity(pairs.len());
    let mut skipped = Vec::new();
    for pair in pairs {
        let doc_text = match (&pair.doc_text, by_id.get(pair.doc_id.as_str())) {
            (Some(text), _) => text.clone(),
            (None, Some(doc)) => doc.full_text(),
            (None, None) => {
                skipped.push(pair.query_id.clone());
                continue;
            }
        };
        match TrainPair::new(&pair.query_id, &pair.query_text, &pair.doc_id, &doc_text) {
            Ok(p) => out.push(p),
            Err(_) => skipped.push(pair.query_id.clone()),
        }
    }
    (out, skipped)
}

/// Dev queries plus the document pool they retrieve over, with relevance
/// marks for nDCG.
#[derive(Debug, Clone)]
pub struct DevSet {
    pub queries: Vec<(String, TokenSequence)>,
    pub docs: Vec<(String, TokenSequence)>,
    pub qrels: Qrels,
}

impl DevSet {
    /// Held-out pairs become the dev set: each query's generating document
    /// is its single relevant document, and the pool is all dev documents.
    pub fn from_pairs(pairs: &[TrainPair]) -> Result<DevSet> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("empty dev pair set".into()));
        }
        let mut queries = Vec::new();
        let mut docs = Vec::new();
        let mut seen_q = BTreeSet::new();
        let mut seen_d = BTreeSet::new();
        let mut qrels = Qrels::new();
        for pair in pairs {
            if seen_q.insert(pair.query_id.clone()) {
                queries.push((pair.query_id.clone(), pair.query.clone()));
            }
            if seen_d.insert(pair.doc_id.clone()) {
                docs.push((pair.doc_id.clone(), pair.doc.clone()));
            }
            if qrels.relevance(&pair.query_id, &pair.doc_id) == 0 {
                let _ = qrels.insert(&pair.query_id, &pair.doc_id, 1);
            }
        }
        Ok(DevSet {
            queries,
            docs,
            qrels,
        })
    }

    /// Dev set from gold judgments: queries that appear in the qrels
    /// retrieve over the pool of judged documents found in the corpus.
    pub fn from_gold(queries: &[Query], qrels: &Qrels, corpus: &[Document]) -> Result<DevSet> {
        let by_id: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut dev_queries = Vec::new();
        for q in queries {
            if qrels.contains_query(&q.id) {
                let tokens = tokenize(&q.text);
                if !tokens.is_empty() {
                    dev_queries.push((q.id.clone(), tokens));
                }
            }
        }
        let mut docs = Vec::new();
        let mut seen = BTreeSet::new();
        for qid in qrels.query_ids() {
            for doc_id in qrels.judgments(qid).unwrap().keys() {
                if seen.insert(doc_id.clone()) {
                    if let Some(doc) = by_id.get(doc_id.as_str()) {
                        let tokens = tokenize(&doc.full_text());
                        if !tokens.is_empty() {
                            docs.push((doc_id.clone(), tokens));
                        }
                    }
                }
            }
        }
        if dev_queries.is_empty() || docs.is_empty() {
            return Err(Error::InvalidInput(
                "gold dev set resolves to no queries or no documents".into(),
            ));
        }
        Ok(DevSet {
            queries: dev_queries,
            docs,
            qrels: qrels.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn default_adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 10,
            learning_rate: 1e-3,
            temperature: 0.05,
            optimizer: Optimizer::default_adam(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Cosine scores live in [-1, 1] and need a sharper softmax than dot.
    pub fn for_similarity(similarity: Similarity) -> Self {
        TrainConfig {
            temperature: match similarity {
                Similarity::Cosine => 0.05,
                Similarity::Dot => 1.0,
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch-size must be >= 2; a single-pair batch has no negatives".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning-rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_ndcg10: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    /// Parameters after the last epoch.
    pub model: EncoderModel,
    pub epochs_completed: usize,
    /// Dev score of the untrained starting model (epoch 0).
    pub initial_dev_ndcg10: f64,
    pub best_dev_ndcg10: f64,
    pub best_epoch: usize,
    /// Snapshot from the best dev epoch; epoch 0 means the starting model.
    pub best_model: EncoderModel,
    pub history: Vec<EpochRecord>,
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

enum OptState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        slots: HashMap<(usize, usize), AdamSlot>,
    },
}

impl OptState {
    fn new(optimizer: &Optimizer) -> Self {
        match *optimizer {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => OptState::Adam {
                beta1,
                beta2,
                epsilon,
                slots: HashMap::new(),
            },
        }
    }

    /// Rows never touched by a batch are not stepped; moment state advances
    /// per-row only when that row has a gradient.
    fn apply(&mut self, model: &mut EncoderModel, grad: &Gradient, lr: f64) {
        let dim = grad.dim();
        match self {
            OptState::Sgd => {
                for (table, bucket, row) in grad.iter() {
                    let target = &mut model.table_mut(table)[bucket * dim..(bucket + 1) * dim];
                    for (theta, g) in target.iter_mut().zip(row) {
                        *theta -= lr * g;
                    }
                }
            }
            OptState::Adam {
                beta1,
                beta2,
                epsilon,
                slots,
            } => {
                for (table, bucket, row) in grad.iter() {
                    let slot = slots.entry((table, bucket)).or_insert_with(|| AdamSlot {
                        m: vec![0.0; dim],
                        v: vec![0.0; dim],
                        t: 0,
                    });
                    slot.t += 1;
                    let bc1 = 1.0 - beta1.powi(slot.t as i32);
                    let bc2 = 1.0 - beta2.powi(slot.t as i32);
                    let target = &mut model.table_mut(table)[bucket * dim..(bucket + 1) * dim];
                    for k in 0..dim {
                        let g = row[k];
                        slot.m[k] = *beta1 * slot.m[k] + (1.0 - *beta1) * g;
                        slot.v[k] = *beta2 * slot.v[k] + (1.0 - *beta2) * g * g;
                        let mhat = slot.m[k] / bc1;
                        let vhat = slot.v[k] / bc2;
                        target[k] -= lr * mhat / (vhat.sqrt() + *epsilon);
                    }
                }
            }
        }
    }
}

/// Mean dev nDCG@10: index the dev document pool, retrieve for every dev
/// query, score against the dev qrels.
pub fn evaluate_dev(model: &EncoderModel, dev: &DevSet) -> Result<f64> {
    if dev.queries.is_empty() {
        return Err(Error::InvalidInput("dev set has no queries".into()));
    }
    let mut ids = Vec::with_capacity(dev.docs.len());
    let mut embeddings = Vec::with_capacity(dev.docs.len());
    for (id, tokens) in &dev.docs {
        ids.push(id.clone());
        embeddings.push(model.encode(tokens, Tower::Document)?);
    }
    let build = DenseIndex::from_embeddings(ids, embeddings, model.similarity)?;
    let mut total = 0.0;
    for (qid, tokens) in &dev.queries {
        let embedding = model.encode(tokens, Tower::Query)?;
        let ranking = build.index.search_embedding(qid, &embedding, DEV_NDCG_K)?;
        total += ndcg_at_k(&ranking, &dev.qrels, DEV_NDCG_K)?;
    }
    Ok(total / dev.queries.len() as f64)
}

pub fn train(
    model: EncoderModel,
    pairs: &[TrainPair],
    dev: &DevSet,
    config: &TrainConfig,
) -> Result<TrainState> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    let mut model = model;
    let initial_dev = evaluate_dev(&model, dev)?;
    let mut best_score = initial_dev;
    let mut best_model = model.clone();
    let mut best_epoch = 0usize;
    let mut history = Vec::with_capacity(config.epochs);
    let mut opt = OptState::new(&config.optimizer);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut substream(config.seed, "epoch-shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<BatchRef> = chunk
                .iter()
                .map(|&i| (&pairs[i].query, &pairs[i].doc))
                .collect();
            let (loss, grad) = loss_gradient(&model, &batch, config.temperature)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            opt.apply(&mut model, &grad, config.learning_rate);
            loss_sum += loss;
            batches += 1;
        }
        let dev_score = evaluate_dev(&model, dev)?;
        history.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / batches as f64,
            dev_ndcg10: dev_score,
        });
        if dev_score > best_score {
            best_score = dev_score;
            best_model = model.clone();
            best_epoch = epoch;
        }
    }

    Ok(TrainState {
        model,
        epochs_completed: config.epochs,
        initial_dev_ndcg10: initial_dev,
        best_dev_ndcg10: best_score,
        best_epoch,
        best_model,
        history,
    })
}

/// Continue training from an existing model on synthetic pairs, holding out
/// `dev_size` of them (seeded split) as the dev set.
pub fn finetune(
    base: &EncoderModel,
    pairs: Vec<TrainPair>,
    config: &TrainConfig,
    dev_size: usize,
) -> Result<TrainState> {
    if dev_size == 0 {
        return Err(Error::InvalidConfig("dev-size must be >= 1".into()));
    }
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 pairs to split off a dev set".into(),
        ));
    }
    let dev_size = dev_size.min(pairs.len() - 1);
    let (rest, dev_pairs) = crate::corpus::split_dev(pairs, dev_size, config.seed);
    let dev = DevSet::from_pairs(&dev_pairs)?;
    train(base.clone(), &rest, &dev, config)
}
