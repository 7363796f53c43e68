//! In-batch-negatives contrastive loss and its analytic gradient.
//!
//! For a batch of B (query, document) pairs, S[i][j] is the similarity of
//! query i and document j. Row i's softmax over S[i][*]/tau should put its
//! mass on the diagonal: loss = -(1/B) sum_i log softmax(S[i][*]/tau)[i],
//! computed with max-subtraction. The gradient is scattered back onto the
//! embedding rows each token touched.

use std::collections::BTreeMap;

use crate::corpus::TokenSequence;
use crate::encoder::{EncoderModel, Similarity, Tower};
use crate::error::{Error, Result};

/// One batch item: (query tokens, positive document tokens).
pub type BatchRef<'a> = (&'a TokenSequence, &'a TokenSequence);

/// Sparse gradient over embedding-table rows, keyed by (table index,
/// bucket). Rows no batch token hashed to are absent, i.e. zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    dim: usize,
    rows: BTreeMap<(usize, usize), Vec<f64>>,
}

impl Gradient {
    fn new(dim: usize) -> Self {
        Gradient {
            dim,
            rows: BTreeMap::new(),
        }
    }

    fn accumulate(&mut self, table: usize, bucket: usize, scale: f64, vec: &[f64]) {
        let row = self
            .rows
            .entry((table, bucket))
            .or_insert_with(|| vec![0.0; self.dim]);
        for (r, v) in row.iter_mut().zip(vec) {
            *r += scale * v;
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, table: usize, bucket: usize) -> Option<&[f64]> {
        self.rows.get(&(table, bucket)).map(Vec::as_slice)
    }

    /// Touched rows in (table, bucket) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[f64])> {
        self.rows
            .iter()
            .map(|(&(t, b), v)| (t, b, v.as_slice()))
    }

    pub fn touched_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

struct Forward {
    loss: f64,
    /// Softmax probabilities per row.
    probs: Vec<Vec<f64>>,
    queries: Vec<Vec<f64>>,
    docs: Vec<Vec<f64>>,
    scores: Vec<Vec<f64>>,
}

fn forward(model: &EncoderModel, batch: &[BatchRef], tau: f64) -> Result<Forward> {
    if tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("temperature {tau} must be > 0")));
    }
    let b = batch.len();
    if b == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut queries = Vec::with_capacity(b);
    let mut docs = Vec::with_capacity(b);
    for (q, d) in batch {
        queries.push(model.encode(q, Tower::Query)?);
        docs.push(model.encode(d, Tower::Document)?);
    }

    let mut scores = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in 0..b {
            let s = model.score(&queries[i], &docs[j])?;
            if !s.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite similarity at batch cell ({i}, {j})"
                )));
            }
            scores[i][j] = s;
        }
    }

    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(b);
    for i in 0..b {
        let row: Vec<f64> = scores[i].iter().map(|s| s / tau).collect();
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let exp: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let denom: f64 = exp.iter().sum();
        loss += denom.ln() + max - row[i];
        probs.push(exp.iter().map(|e| e / denom).collect());
    }
    loss /= b as f64;

    Ok(Forward {
        loss,
        probs,
        queries,
        docs,
        scores,
    })
}

pub fn inbatch_loss(model: &EncoderModel, batch: &[BatchRef], tau: f64) -> Result<f64> {
    Ok(forward(model, batch, tau)?.loss)
}

/// Loss plus its exact gradient with respect to every touched table row.
pub fn loss_gradient(
    model: &EncoderModel,
    batch: &[BatchRef],
    tau: f64,
) -> Result<(f64, Gradient)> {
    let fwd = forward(model, batch, tau)?;
    let b = batch.len();
    let dim = model.dim;

    // dL/dS[i][j] = (p[i][j] - [i == j]) / (B * tau)
    // chain through the similarity into per-text embedding gradients
    let mut dq = vec![vec![0.0; dim]; b];
    let mut dd = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let delta = if i == j { 1.0 } else { 0.0 };
            let coef = (fwd.probs[i][j] - delta) / (b as f64 * tau);
            if coef == 0.0 {
                continue;
            }
            match model.similarity {
                Similarity::Dot => {
                    for k in 0..dim {
                        dq[i][k] += coef * fwd.docs[j][k];
                        dd[j][k] += coef * fwd.queries[i][k];
                    }
                }
                Similarity::Cosine => {
                    let q = &fwd.queries[i];
                    let d = &fwd.docs[j];
                    let nq = super::norm(q);
                    let nd = super::norm(d);
                    let s = fwd.scores[i][j];
                    let inv = 1.0 / (nq * nd);
                    for k in 0..dim {
                        dq[i][k] += coef * (d[k] * inv - s * q[k] / (nq * nq));
                        dd[j][k] += coef * (q[k] * inv - s * d[k] / (nd * nd));
                    }
                }
            }
        }
    }

    // scatter onto the rows each token touched; the mean pool contributes
    // 1/len per occurrence
    let q_table = model.table_index(Tower::Query);
    let d_table = model.table_index(Tower::Document);
    let mut grad = Gradient::new(dim);
    for (i, (q_tokens, _)) in batch.iter().enumerate() {
        let inv = 1.0 / q_tokens.len() as f64;
        for token in q_tokens.tokens() {
            grad.accumulate(q_table, model.bucket(token), inv, &dq[i]);
        }
    }
    for (j, (_, d_tokens)) in batch.iter().enumerate() {
        let inv = 1.0 / d_tokens.len() as f64;
        for token in d_tokens.tokens() {
            grad.accumulate(d_table, model.bucket(token), inv, &dd[j]);
        }
    }

    Ok((fwd.loss, grad))
}
