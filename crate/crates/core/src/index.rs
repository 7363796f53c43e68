//! Exact top-k retrieval over a dense document matrix.
//!
//! Documents are encoded once into a row-major f32 matrix (L2-normalized
//! when the model scores by cosine, so scoring is always a plain dot
//! product). Search scans every row in cache-sized blocks, keeping the best
//! k candidates in a bounded heap. No approximation anywhere: results equal
//! a full sort, with ties broken by ascending doc id.
//!
//! Scoring arithmetic is pinned down so independently written oracles can
//! reproduce scores bit-for-bit: eight parallel f32 accumulators over the
//! row (lane l takes elements l, l+8, ...), folded as
//! ((acc0+acc1)+(acc2+acc3)) + ((acc4+acc5)+(acc6+acc7)), plus a sequential
//! tail for dimensions past the last multiple of 8.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{tokenize, Document, Query};
use crate::encoder::{norm, EncoderModel, Similarity, Tower};
use crate::error::{Error, Result};

pub const DEFAULT_BLOCK_ROWS: usize = 4096;
/// Queries scored together against each block, so a hot block serves many
/// queries before leaving cache.
const QUERY_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct RunRanking {
    pub query_id: String,
    /// (doc-id, score), descending score, ties by ascending doc id.
    pub hits: Vec<(String, f32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryFailure {
    pub query_id: String,
    pub reason: String,
}

pub struct BatchSearchOutcome {
    /// One ranking per successful query, in input order.
    pub rankings: Vec<RunRanking>,
    pub failures: Vec<QueryFailure>,
}

pub struct IndexBuild {
    pub index: DenseIndex,
    /// Documents excluded from the index: empty after tokenization, or
    /// zero-norm under cosine.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    doc_ids: Vec<String>,
    matrix: Vec<f32>,
    dim: usize,
    similarity: Similarity,
    normalized: bool,
    block_rows: usize,
}

/// The documented 8-lane dot product. Both the index scan and test oracles
/// go through this exact arithmetic.
#[inline]
pub fn dot_lanes(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let a_chunks = a.chunks_exact(LANES);
    let b_chunks = b.chunks_exact(LANES);
    let a_rem = a_chunks.remainder();
    let b_rem = b_chunks.remainder();
    for (ca, cb) in a_chunks.zip(b_chunks) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in a_rem.iter().zip(b_rem) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Heap entry ordered so the binary heap's top is the worst candidate:
/// lower score is worse; on equal scores a larger doc id is worse.
struct Cand<'a> {
    score: f32,
    id: &'a str,
    row: u32,
}

impl Cand<'_> {
    fn cmp_key(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialEq for Cand<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}
impl Eq for Cand<'_> {}
impl PartialOrd for Cand<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp_key(other))
    }
}
impl Ord for Cand<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key(other)
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl DenseIndex {
    /// Encode a corpus and index it. Documents with no tokens (or zero norm
    /// under cosine) are left out and reported, not fatal; an index needs at
    /// least one row.
    pub fn build(model: &EncoderModel, docs: &[Document]) -> Result<IndexBuild> {
        if docs.is_empty() {
            return Err(Error::InvalidInput("no documents to index".into()));
        }
        let mut seen = HashSet::with_capacity(docs.len());
        for doc in docs {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate doc id {:?}", doc.id)));
            }
        }
        let encoded: Vec<Option<Vec<f64>>> = docs
            .par_iter()
            .map(|doc| {
                let tokens = tokenize(&doc.full_text());
                if tokens.is_empty() {
                    return None;
                }
                model.encode(&tokens, Tower::Document).ok()
            })
            .collect();
        let mut ids = Vec::with_capacity(docs.len());
        let mut embeddings = Vec::with_capacity(docs.len());
        let mut skipped = Vec::new();
        for (doc, enc) in docs.iter().zip(encoded) {
            match enc {
                Some(e) => {
                    ids.push(doc.id.clone());
                    embeddings.push(e);
                }
                None => skipped.push(doc.id.clone()),
            }
        }
        if ids.is_empty() {
            return Err(Error::InvalidInput("every document tokenized to nothing".into()));
        }
        let mut build = Self::from_embeddings(ids, embeddings, model.similarity)?;
        let mut all_skipped = skipped;
        all_skipped.append(&mut build.skipped);
        Ok(IndexBuild {
            index: build.index,
            skipped: all_skipped,
        })
    }

    /// Index precomputed f64 embeddings. Cosine indexes normalize rows in
    /// f64 before the f32 cast; zero-norm rows are skipped and reported.
    pub fn from_embeddings(
        ids: Vec<String>,
        embeddings: Vec<Vec<f64>>,
        similarity: Similarity,
    ) -> Result<IndexBuild> {
        if ids.len() != embeddings.len() {
            return Err(Error::InvalidInput(format!(
                "{} ids vs {} embeddings",
                ids.len(),
                embeddings.len()
            )));
        }
        if ids.is_empty() {
            return Err(Error::InvalidInput("no embeddings to index".into()));
        }
        let dim = embeddings[0].len();
        let mut doc_ids = Vec::with_capacity(ids.len());
        let mut matrix = Vec::with_capacity(ids.len() * dim);
        let mut skipped = Vec::new();
        for (id, embedding) in ids.into_iter().zip(embeddings) {
            if embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: embedding.len(),
                });
            }
            match similarity {
                Similarity::Cosine => {
                    let n = norm(&embedding);
                    if n == 0.0 {
                        skipped.push(id);
                        continue;
                    }
                    matrix.extend(embedding.iter().map(|&x| (x / n) as f32));
                    doc_ids.push(id);
                }
                Similarity::Dot => {
                    matrix.extend(embedding.iter().map(|&x| x as f32));
                    doc_ids.push(id);
                }
            }
        }
        if doc_ids.is_empty() {
            return Err(Error::InvalidInput("all rows had zero norm".into()));
        }
        let index = Self::from_parts(
            doc_ids,
            matrix,
            dim,
            similarity,
            similarity == Similarity::Cosine,
        )?;
        Ok(IndexBuild { index, skipped })
    }

    /// Wrap an existing matrix. Validates shape, id uniqueness, and the
    /// normalization claim.
    pub fn from_parts(
        doc_ids: Vec<String>,
        matrix: Vec<f32>,
        dim: usize,
        similarity: Similarity,
        normalized: bool,
    ) -> Result<Self> {
        if doc_ids.is_empty() {
            return Err(Error::InvalidInput("index needs at least one document".into()));
        }
        if dim == 0 || matrix.len() != doc_ids.len() * dim {
            return Err(Error::InvalidInput(format!(
                "matrix is {} values, want {} x {dim}",
                matrix.len(),
                doc_ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(doc_ids.len());
        for id in &doc_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate doc id {id:?}")));
            }
        }
        if normalized {
            for (i, row) in matrix.chunks_exact(dim).enumerate() {
                let n = row.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "row {i} claims normalized but has norm {n}"
                    )));
                }
            }
        }
        Ok(DenseIndex {
            doc_ids,
            matrix,
            dim,
            similarity,
            normalized,
            block_rows: DEFAULT_BLOCK_ROWS,
        })
    }

    pub fn with_block_rows(mut self, block_rows: usize) -> Self {
        self.block_rows = block_rows.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn similarity(&self) -> Similarity {
        self.similarity
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Score of document row i against a prepared query vector, through the
    /// documented lane arithmetic.
    pub fn score_row(&self, i: usize, query: &[f32]) -> f32 {
        dot_lanes(self.row(i), query)
    }

    /// Turn a query embedding into the f32 vector actually scored:
    /// normalized first when the index is cosine.
    fn prepare(&self, embedding: &[f64]) -> Result<Vec<f32>> {
        if embedding.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: embedding.len(),
                right: self.dim,
            });
        }
        match self.similarity {
            Similarity::Cosine => {
                let n = norm(embedding);
                if n == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                Ok(embedding.iter().map(|&x| (x / n) as f32).collect())
            }
            Similarity::Dot => Ok(to_f32(embedding)),
        }
    }

    fn top_k(&self, query: &[f32], k: usize) -> Vec<(String, f32)> {
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        let rows = self.len();
        let mut start = 0usize;
        while start < rows {
            let end = (start + self.block_rows).min(rows);
            for i in start..end {
                let score = self.score_row(i, query);
                let cand = Cand {
                    score,
                    id: &self.doc_ids[i],
                    row: i as u32,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if cand < *heap.peek().unwrap() {
                    heap.pop();
                    heap.push(cand);
                }
            }
            start = end;
        }
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (self.doc_ids[c.row as usize].clone(), c.score))
            .collect()
    }

    /// Exact top-k for one query embedding (unnormalized; preparation
    /// happens here). |hits| = min(k, N).
    pub fn search_embedding(
        &self,
        query_id: &str,
        embedding: &[f64],
        k: usize,
    ) -> Result<RunRanking> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        let query = self.prepare(embedding)?;
        Ok(RunRanking {
            query_id: query_id.to_string(),
            hits: self.top_k(&query, k),
        })
    }

    /// Tokenize, encode, and search one query.
    pub fn search(&self, model: &EncoderModel, query: &Query, k: usize) -> Result<RunRanking> {
        let tokens = tokenize(&query.text);
        if tokens.is_empty() {
            return Err(Error::InvalidInput(format!(
                "query {:?} tokenizes to nothing",
                query.id
            )));
        }
        let embedding = model.encode(&tokens, Tower::Query)?;
        self.search_embedding(&query.id, &embedding, k)
    }

    /// Search many queries. Failures (empty query, zero norm) are collected,
    /// not fatal; successful rankings come back in input order. Work is
    /// chunked so one hot document block serves many queries, and chunks run
    /// in parallel.
    pub fn batch_search(
        &self,
        model: &EncoderModel,
        queries: &[Query],
        k: usize,
    ) -> Result<BatchSearchOutcome> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        let mut prepared: Vec<(String, Vec<f32>)> = Vec::with_capacity(queries.len());
        let mut failures = Vec::new();
        for query in queries {
            let tokens = tokenize(&query.text);
            if tokens.is_empty() {
                failures.push(QueryFailure {
                    query_id: query.id.clone(),
                    reason: "tokenizes to nothing".into(),
                });
                continue;
            }
            let outcome = model
                .encode(&tokens, Tower::Query)
                .and_then(|e| self.prepare(&e));
            match outcome {
                Ok(vec) => prepared.push((query.id.clone(), vec)),
                Err(e) => failures.push(QueryFailure {
                    query_id: query.id.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        let rankings: Vec<RunRanking> = prepared
            .par_chunks(QUERY_CHUNK)
            .flat_map_iter(|chunk| self.search_chunk(chunk, k))
            .collect();
        Ok(BatchSearchOutcome { rankings, failures })
    }

    /// Block-outer, query-inner scan for a chunk of prepared queries.
    fn search_chunk(&self, chunk: &[(String, Vec<f32>)], k: usize) -> Vec<RunRanking> {
        let rows = self.len();
        let mut heaps: Vec<BinaryHeap<Cand>> = chunk
            .iter()
            .map(|_| BinaryHeap::with_capacity(k + 1))
            .collect();
        let mut start = 0usize;
        while start < rows {
            let end = (start + self.block_rows).min(rows);
            for (heap, (_, query)) in heaps.iter_mut().zip(chunk) {
                for i in start..end {
                    let score = self.score_row(i, query);
                    let cand = Cand {
                        score,
                        id: &self.doc_ids[i],
                        row: i as u32,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            start = end;
        }
        heaps
            .into_iter()
            .zip(chunk)
            .map(|(heap, (qid, _))| RunRanking {
                query_id: qid.clone(),
                hits: heap
                    .into_sorted_vec()
                    .into_iter()
                    .map(|c| (self.doc_ids[c.row as usize].clone(), c.score))
                    .collect(),
            })
            .collect()
    }
}

const INDEX_MAGIC: &[u8; 8] = b"SQINDEX1";
const INDEX_VERSION: u32 = 1;

impl DenseIndex {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        w.write_all(INDEX_MAGIC).map_err(io_err)?;
        w.write_all(&INDEX_VERSION.to_le_bytes()).map_err(io_err)?;
        let sim = match self.similarity {
            Similarity::Cosine => 0u8,
            Similarity::Dot => 1u8,
        };
        w.write_all(&[sim, self.normalized as u8]).map_err(io_err)?;
        w.write_all(&0u16.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.dim as u64).to_le_bytes()).map_err(io_err)?;
        for id in &self.doc_ids {
            w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io_err)?;
            w.write_all(id.as_bytes()).map_err(io_err)?;
        }
        for value in &self.matrix {
            w.write_all(&value.to_le_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |message: String| Error::IndexFormat {
            path: path.into(),
            message,
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != INDEX_MAGIC {
            return Err(bad("not an index file (bad magic)".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
        let version = u32::from_le_bytes(buf4);
        if version != INDEX_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags).map_err(|e| Error::io(path, e))?;
        let similarity = match flags[0] {
            0 => Similarity::Cosine,
            1 => Similarity::Dot,
            other => return Err(bad(format!("unknown similarity byte {other}"))),
        };
        let normalized = match flags[1] {
            0 => false,
            1 => true,
            other => return Err(bad(format!("bad normalized flag {other}"))),
        };
        let mut pad = [0u8; 2];
        r.read_exact(&mut pad).map_err(|e| Error::io(path, e))?;
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
        let n = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
        let dim = u64::from_le_bytes(buf8) as usize;
        if n == 0 || dim == 0 || n.checked_mul(dim).is_none() {
            return Err(bad(format!("bad shape {n} x {dim}")));
        }
        let mut doc_ids = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
            let len = u32::from_le_bytes(buf4) as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id).map_err(|e| Error::io(path, e))?;
            doc_ids.push(
                String::from_utf8(id).map_err(|_| bad("doc id is not valid UTF-8".into()))?,
            );
        }
        let mut matrix = vec![0.0f32; n * dim];
        let mut fbuf = [0u8; 4];
        for slot in &mut matrix {
            r.read_exact(&mut fbuf).map_err(|e| Error::io(path, e))?;
            *slot = f32::from_le_bytes(fbuf);
        }
        Self::from_parts(doc_ids, matrix, dim, similarity, normalized)
    }
}

/// Run files: one TSV row per hit, `query-id  doc-id  rank  score`, ranks
/// starting at 1, queries in writing order.
pub fn write_run_file(path: impl AsRef<Path>, rankings: &[RunRanking]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ranking in rankings {
        for (rank, (doc_id, score)) in ranking.hits.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{}", ranking.query_id, doc_id, rank + 1, score)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_run_file(path: impl AsRef<Path>) -> Result<Vec<RunRanking>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rankings: Vec<RunRanking> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(path, lineno, "expected 4 tab-separated fields"));
        }
        let rank: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad rank {:?}", fields[2])))?;
        let score: f32 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad score {:?}", fields[3])))?;
        let need_new = rankings.last().is_none_or(|r| r.query_id != fields[0]);
        if need_new {
            if rank != 1 {
                return Err(Error::parse(path, lineno, "ranking must start at rank 1"));
            }
            rankings.push(RunRanking {
                query_id: fields[0].to_string(),
                hits: Vec::new(),
            });
        }
        let current = rankings.last_mut().unwrap();
        if rank != current.hits.len() + 1 {
            return Err(Error::parse(path, lineno, format!("rank {rank} out of sequence")));
        }
        current.hits.push((fields[1].to_string(), score));
    }
    Ok(rankings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderParams;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            title: String::new(),
            text: text.into(),
        }
    }

    fn model(similarity: Similarity) -> EncoderModel {
        EncoderModel::new(EncoderParams {
            buckets: 256,
            dim: 16,
            tied: true,
            similarity,
            seed: 5,
        })
        .unwrap()
    }

    /// Independent full-sort oracle using the same documented scoring.
    fn brute_force(index: &DenseIndex, query: &[f32], k: usize) -> Vec<(String, f32)> {
        let mut scored: Vec<(String, f32)> = (0..index.len())
            .map(|i| (index.doc_ids()[i].clone(), index.score_row(i, query)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    #[test]
    fn build_orders_rows_and_normalizes() {
        let m = model(Similarity::Cosine);
        let docs = vec![
            doc("a", "first document text"),
            doc("b", "second document text"),
            doc("c", "third document body"),
        ];
        let build = DenseIndex::build(&m, &docs).unwrap();
        assert_eq!(build.index.len(), 3);
        assert_eq!(build.index.doc_ids(), &["a", "b", "c"]);
        assert!(build.skipped.is_empty());
        assert!(build.index.normalized());
        for i in 0..3 {
            let n: f64 = build
                .index
                .row(i)
                .iter()
                .map(|x| f64::from(*x) * f64::from(*x))
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let again = DenseIndex::build(&m, &docs).unwrap();
        assert_eq!(build.index, again.index);
    }

    #[test]
    fn build_skips_empty_docs_and_rejects_all_empty() {
        let m = model(Similarity::Cosine);
        let docs = vec![doc("a", "real words"), doc("b", "   ")];
        let build = DenseIndex::build(&m, &docs).unwrap();
        assert_eq!(build.index.len(), 1);
        assert_eq!(build.skipped, ["b"]);

        let all_empty = vec![doc("x", " "), doc("y", "\t")];
        assert!(DenseIndex::build(&m, &all_empty).is_err());

        let dupes = vec![doc("a", "words"), doc("a", "more")];
        assert!(DenseIndex::build(&m, &dupes).is_err());
    }

    #[test]
    fn search_matches_brute_force_and_breaks_ties_by_id() {
        let ids: Vec<String> = (0..40).map(|i| format!("doc{i:02}")).collect();
        // duplicate embeddings in groups of 4 force exact score ties
        let embeddings: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let g = (i / 4) as f64;
                vec![g.cos(), g.sin(), 1.0 - g / 10.0]
            })
            .collect();
        let build =
            DenseIndex::from_embeddings(ids, embeddings, Similarity::Cosine).unwrap();
        let index = build.index.with_block_rows(7); // force multiple blocks
        let query = index.prepare(&[0.3, -0.2, 0.9]).unwrap();
        for k in [1, 3, 10, 40, 100] {
            let got = index.search_embedding("q", &[0.3, -0.2, 0.9], k).unwrap();
            let want = brute_force(&index, &query, k);
            assert_eq!(got.hits, want, "k = {k}");
            assert_eq!(got.hits.len(), 40.min(k));
        }
        // within a tie group, ids ascend
        let full = index.search_embedding("q", &[0.3, -0.2, 0.9], 40).unwrap();
        for window in full.hits.windows(2) {
            let (ref id0, s0) = window[0];
            let (ref id1, s1) = window[1];
            assert!(s0 >= s1);
            if s0 == s1 {
                assert!(id0 < id1, "{id0} should sort before {id1}");
            }
        }
    }

    #[test]
    fn cosine_and_dot_agree_on_normalized_rows() {
        let raw: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let x = i as f64;
                vec![x.sin() * 3.0, (x * 0.7).cos() * 2.0, 0.1 * x, 1.0]
            })
            .collect();
        let ids: Vec<String> = (0..30).map(|i| format!("d{i:02}")).collect();
        let normalized: Vec<Vec<f64>> = raw
            .iter()
            .map(|v| {
                let n = norm(v);
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        let cos_index = DenseIndex::from_embeddings(ids.clone(), raw, Similarity::Cosine)
            .unwrap()
            .index;
        let dot_index = DenseIndex::from_embeddings(ids, normalized, Similarity::Dot)
            .unwrap()
            .index;
        let query = vec![0.4, -1.2, 0.8, 0.3];
        let qn: Vec<f64> = {
            let n = norm(&query);
            query.iter().map(|x| x / n).collect()
        };
        let a = cos_index.search_embedding("q", &query, 30).unwrap();
        let b = dot_index.search_embedding("q", &qn, 30).unwrap();
        assert_eq!(a.hits, b.hits);
    }

    #[test]
    fn batch_search_equals_individual_and_collects_failures() {
        let m = model(Similarity::Cosine);
        let docs: Vec<Document> = (0..10)
            .map(|i| doc(&format!("d{i}"), &format!("document number {i} about topics")))
            .collect();
        let index = DenseIndex::build(&m, &docs).unwrap().index;
        let queries = vec![
            Query {
                id: "q1".into(),
                text: "document about topics".into(),
            },
            Query {
                id: "q2".into(),
                text: "   ".into(),
            },
            Query {
                id: "q3".into(),
                text: "number three".into(),
            },
        ];
        let outcome = index.batch_search(&m, &queries, 5).unwrap();
        assert_eq!(outcome.rankings.len(), 2);
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].query_id, "q2");
        for ranking in &outcome.rankings {
            let single = index
                .search(&m, queries.iter().find(|q| q.id == ranking.query_id).unwrap(), 5)
                .unwrap();
            assert_eq!(ranking, &single);
        }

        let none = index.batch_search(&m, &[], 5).unwrap();
        assert!(none.rankings.is_empty());
    }

    #[test]
    fn index_file_round_trips() {
        let m = model(Similarity::Dot);
        let docs: Vec<Document> = (0..5)
            .map(|i| doc(&format!("d{i}"), &format!("body of text {i}")))
            .collect();
        let index = DenseIndex::build(&m, &docs).unwrap().index;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        index.save(&path).unwrap();
        let loaded = DenseIndex::load(&path).unwrap();
        assert_eq!(loaded, index);

        std::fs::write(&path, b"garbage").unwrap();
        assert!(DenseIndex::load(&path).is_err());
    }

    #[test]
    fn run_file_round_trips() {
        let rankings = vec![
            RunRanking {
                query_id: "q1".into(),
                hits: vec![("d3".into(), 0.75), ("d1".into(), 0.5), ("d9".into(), -0.25)],
            },
            RunRanking {
                query_id: "q2".into(),
                hits: vec![("d2".into(), 1.0)],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.tsv");
        write_run_file(&path, &rankings).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("q1\td3\t1\t0.75\n"));
        assert_eq!(read_run_file(&path).unwrap(), rankings);
    }

    #[test]
    fn lane_arithmetic_handles_all_lengths() {
        for d in [1usize, 7, 8, 9, 16, 63, 64, 65] {
            let a: Vec<f32> = (0..d).map(|i| (i as f32 * 0.37).sin()).collect();
            let b: Vec<f32> = (0..d).map(|i| (i as f32 * 0.11).cos()).collect();
            let got = dot_lanes(&a, &b);
            let want: f64 = a
                .iter()
                .zip(&b)
                .map(|(x, y)| f64::from(*x) * f64::from(*y))
                .sum();
            assert!((f64::from(got) - want).abs() < 1e-4, "d={d}");
        }
    }
}
