//! Feature-hashed bag-of-embeddings text encoder.
//!
//! Tokens are hashed into V buckets (64-bit FNV-1a mod V); a text's embedding
//! is the mean of its tokens' embedding rows. Towers can share one table
//! (tied) or hold separate query/document tables. Small enough to train on a
//! laptop, structured like the dual encoders it stands in for.

mod loss;
mod train;

pub mod io;

pub use loss::{inbatch_loss, loss_gradient, BatchRef, Gradient};
pub use train::{
    evaluate_dev, finetune, pairs_from_synthetic, train, DevSet, EpochRecord, Optimizer,
    TrainConfig, TrainPair, TrainState,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Cosine,
    Dot,
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Similarity::Cosine => f.write_str("cosine"),
            Similarity::Dot => f.write_str("dot"),
        }
    }
}

impl FromStr for Similarity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Similarity::Cosine),
            "dot" => Ok(Similarity::Dot),
            other => Err(Error::InvalidConfig(format!("unknown similarity {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tower {
    Query,
    Document,
}

/// Shape and initialization settings for a fresh model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EncoderParams {
    /// Hash bucket count V.
    pub buckets: usize,
    /// Embedding dimension d.
    pub dim: usize,
    pub tied: bool,
    pub similarity: Similarity,
    pub seed: u64,
}

impl Default for EncoderParams {
    fn default() -> Self {
        EncoderParams {
            buckets: 65_536,
            dim: 64,
            tied: true,
            similarity: Similarity::Cosine,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub buckets: usize,
    pub dim: usize,
    pub tied: bool,
    pub similarity: Similarity,
    pub seed: u64,
    /// Row-major V x d. Shared by both towers when tied.
    query_table: Vec<f64>,
    /// Present iff untied.
    doc_table: Option<Vec<f64>>,
}

const INIT_STD: f64 = 0.02;

/// Standard normal via Box-Muller; keeps the dependency list short and the
/// draw sequence pinned down.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1], log-safe
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl EncoderModel {
    pub fn new(params: EncoderParams) -> Result<Self> {
        if params.buckets < 1 || params.dim < 1 {
            return Err(Error::InvalidConfig(
                "buckets and dim must both be >= 1".into(),
            ));
        }
        let fill = |tag: &str| -> Vec<f64> {
            let mut rng = substream(params.seed, tag, 0);
            (0..params.buckets * params.dim)
                .map(|_| INIT_STD * normal(&mut rng))
                .collect()
        };
        Ok(EncoderModel {
            buckets: params.buckets,
            dim: params.dim,
            tied: params.tied,
            similarity: params.similarity,
            seed: params.seed,
            query_table: fill("init-query"),
            doc_table: if params.tied { None } else { Some(fill("init-doc")) },
        })
    }

    pub fn from_tables(
        params: EncoderParams,
        query_table: Vec<f64>,
        doc_table: Option<Vec<f64>>,
    ) -> Result<Self> {
        let want = params.buckets * params.dim;
        if query_table.len() != want || doc_table.as_ref().is_some_and(|t| t.len() != want) {
            return Err(Error::InvalidConfig("table size mismatch".into()));
        }
        if params.tied != doc_table.is_none() {
            return Err(Error::InvalidConfig(
                "tied models carry one table, untied two".into(),
            ));
        }
        Ok(EncoderModel {
            buckets: params.buckets,
            dim: params.dim,
            tied: params.tied,
            similarity: params.similarity,
            seed: params.seed,
            query_table,
            doc_table,
        })
    }

    pub fn params(&self) -> EncoderParams {
        EncoderParams {
            buckets: self.buckets,
            dim: self.dim,
            tied: self.tied,
            similarity: self.similarity,
            seed: self.seed,
        }
    }

    /// 64-bit FNV-1a over the token bytes, reduced mod V.
    pub fn bucket(&self, token: &str) -> usize {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(PRIME);
        }
        (h % self.buckets as u64) as usize
    }

    /// Index of the table a tower reads from: 0 for query (and everything
    /// when tied), 1 for the document table of an untied model.
    pub fn table_index(&self, tower: Tower) -> usize {
        match (tower, self.tied) {
            (Tower::Document, false) => 1,
            _ => 0,
        }
    }

    pub fn table_count(&self) -> usize {
        if self.tied {
            1
        } else {
            2
        }
    }

    pub fn table(&self, table_index: usize) -> &[f64] {
        match table_index {
            0 => &self.query_table,
            1 => self.doc_table.as_ref().expect("untied model"),
            _ => panic!("table index out of range"),
        }
    }

    pub fn table_mut(&mut self, table_index: usize) -> &mut [f64] {
        match table_index {
            0 => &mut self.query_table,
            1 => self.doc_table.as_mut().expect("untied model"),
            _ => panic!("table index out of range"),
        }
    }

    pub fn row(&self, table_index: usize, bucket: usize) -> &[f64] {
        &self.table(table_index)[bucket * self.dim..(bucket + 1) * self.dim]
    }

    /// Mean of the token rows.
    pub fn encode(&self, tokens: &TokenSequence, tower: Tower) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::EmptyTokens);
        }
        let table = self.table(self.table_index(tower));
        let mut out = vec![0.0; self.dim];
        for token in tokens.tokens() {
            let row = &table[self.bucket(token) * self.dim..][..self.dim];
            for (o, r) in out.iter_mut().zip(row) {
                *o += r;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        Ok(out)
    }

    /// Similarity between two embeddings under this model's scoring rule.
    pub fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self.similarity {
            Similarity::Cosine => cosine(a, b),
            Similarity::Dot => dot(a, b),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let prod = dot(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(prod / (na * nb))
}
