//! Rule-based pair generation: independent cropping plus random word deletion.
//!
//! Each document yields one synthetic pair. The query view and the document
//! view are cropped independently from the same token sequence, then each has
//! words deleted at a fixed rate. Everything is driven by per-document RNG
//! streams, so output is independent of thread count and iteration order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{tokenize, Document, Provenance, SyntheticPair, TokenSequence};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CropConfig {
    /// Crop length bounds as fractions of the document length.
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Probability of dropping each token after cropping.
    pub deletion_prob: f64,
    /// Floor on crop length, before clamping to the document length.
    pub min_tokens: usize,
    pub seed: u64,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            ratio_min: 0.1,
            ratio_max: 0.5,
            deletion_prob: 0.1,
            min_tokens: 1,
            seed: 0,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_min > 0.0 && self.ratio_min <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ratio-min {} outside (0, 1]",
                self.ratio_min
            )));
        }
        if !(self.ratio_max > 0.0 && self.ratio_max <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ratio-max {} outside (0, 1]",
                self.ratio_max
            )));
        }
        if self.ratio_min > self.ratio_max {
            return Err(Error::InvalidConfig(format!(
                "ratio-min {} > ratio-max {}",
                self.ratio_min, self.ratio_max
            )));
        }
        if !(self.deletion_prob >= 0.0 && self.deletion_prob < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "deletion-prob {} outside [0, 1)",
                self.deletion_prob
            )));
        }
        if self.min_tokens < 1 {
            return Err(Error::InvalidConfig("min-tokens must be >= 1".into()));
        }
        Ok(())
    }

    /// Short hash stamped into every pair so runs can be traced to settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..6])
    }
}

/// Contiguous span with length max(min-tokens, round(r * n)) clamped to n,
/// where r is uniform in [ratio-min, ratio-max]; start position uniform.
pub fn crop_span(
    tokens: &TokenSequence,
    config: &CropConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TokenSequence> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::EmptyTokens);
    }
    let ratio = rng.random_range(config.ratio_min..=config.ratio_max);
    let len = ((ratio * n as f64).round() as usize)
        .max(config.min_tokens)
        .min(n);
    let start = rng.random_range(0..=(n - len));
    Ok(TokenSequence::new(
        tokens.tokens()[start..start + len].to_vec(),
    ))
}

/// Drop each token independently with probability `deletion_prob`, keeping
/// order. If everything is deleted, one uniformly chosen token survives.
pub fn delete_words(
    tokens: &TokenSequence,
    deletion_prob: f64,
    rng: &mut ChaCha8Rng,
) -> TokenSequence {
    let kept: Vec<String> = tokens
        .tokens()
        .iter()
        .filter(|_| !rng.random_bool(deletion_prob))
        .cloned()
        .collect();
    if kept.is_empty() && !tokens.is_empty() {
        let idx = rng.random_range(0..tokens.len());
        return TokenSequence::new(vec![tokens.tokens()[idx].clone()]);
    }
    TokenSequence::new(kept)
}

/// One synthetic pair from one document: query view and document view are
/// independent crops, each followed by word deletion.
pub fn generate_pair(
    doc: &Document,
    config: &CropConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticPair> {
    let tokens = tokenize(&doc.full_text());
    if tokens.is_empty() {
        return Err(Error::InvalidInput(format!(
            "document {:?} has no tokens",
            doc.id
        )));
    }
    let query = delete_words(&crop_span(&tokens, config, rng)?, config.deletion_prob, rng);
    let doc_view = delete_words(&crop_span(&tokens, config, rng)?, config.deletion_prob, rng);
    Ok(SyntheticPair {
        query_id: format!("crop-{}", doc.id),
        query_text: query.join(),
        doc_id: doc.id.clone(),
        doc_text: Some(doc_view.join()),
        provenance: Provenance::Crop,
        generator_label: "crop".to_string(),
        config_hash: config.hash(),
        latency_ms: None,
    })
}

pub struct CropRun {
    pub pairs: Vec<SyntheticPair>,
    /// Ids of documents that tokenized to nothing and produced no pair.
    pub lost: Vec<String>,
}

/// Run the generator over a whole corpus. Parallel across documents; each
/// document gets its own RNG stream keyed by (seed, index), so results match
/// a sequential run.
pub fn generate_corpus(docs: &[Document], config: &CropConfig) -> Result<CropRun> {
    config.validate()?;
    let results: Vec<std::result::Result<SyntheticPair, String>> = docs
        .par_iter()
        .enumerate()
        .map(|(idx, doc)| {
            let mut rng = substream(config.seed, "crop-pair", idx as u64);
            generate_pair(doc, config, &mut rng).map_err(|_| doc.id.clone())
        })
        .collect();
    let mut pairs = Vec::new();
    let mut lost = Vec::new();
    for r in results {
        match r {
            Ok(p) => pairs.push(p),
            Err(id) => lost.push(id),
        }
    }
    Ok(CropRun { pairs, lost })
}
