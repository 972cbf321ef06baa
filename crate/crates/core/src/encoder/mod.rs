//! Text encoders mapping normalized strings to unit vectors.
//!
//! Two implementations share the [`TextEncoder`] trait: [`NgramEncoder`], a
//! trainable hashed character n-gram model, and [`LookupEncoder`], which serves
//! embeddings computed elsewhere.

mod lookup;
mod ngram;

pub use lookup::LookupEncoder;
pub use ngram::{
    hash_ngrams, ngram_bucket, EncoderConfig, Forward, Gradients, NgramEncoder, CHECKPOINT_MAGIC, NGRAM_HASH_SEED,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, EmbeddingMatrix, Matrix};
use crate::text::normalize;

/// Embeddings with a smaller norm than this are rejected instead of normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Batch encoding works through the input in chunks of this many texts.
pub const BATCH_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding component {i}")));
        }
        Ok(EmbeddingVector { values })
    }

    /// Builds an L2-normalized vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let mut v = Self::new(values)?;
        v.normalize()?;
        Ok(v)
    }

    pub fn normalize(&mut self) -> Result<()> {
        let norm = l2_norm(&self.values);
        if !(norm >= DEGENERATE_NORM) {
            return Err(Error::DegenerateEmbedding { norm });
        }
        for v in &mut self.values {
            *v /= norm;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

/// Cosine similarity of two embeddings (dot product of unit vectors).
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    crate::linalg::dot(a.as_slice(), b.as_slice())
}

pub trait TextEncoder: Sync {
    fn dim(&self) -> usize;

    fn encode(&self, text: &str) -> Result<EmbeddingVector>;

    /// Row `i` equals `encode(texts[i])`. Any text that is empty after
    /// normalization fails the whole batch with its index.
    fn encode_batch<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<EmbeddingMatrix>
    where
        Self: Sized,
    {
        encode_batch_with(self, texts)
    }
}

pub(crate) fn encode_batch_with<E: TextEncoder + ?Sized, S: AsRef<str> + Sync>(
    encoder: &E,
    texts: &[S],
) -> Result<EmbeddingMatrix> {
    if let Some(index) = texts.iter().position(|t| normalize(t.as_ref()).is_empty()) {
        return Err(Error::EmptyInputAt { index });
    }
    let dim = encoder.dim();
    let mut out = Matrix::zeros(texts.len(), dim);
    for (chunk_idx, chunk) in texts.chunks(BATCH_CHUNK).enumerate() {
        let encoded: Vec<Result<EmbeddingVector>> =
            chunk.par_iter().map(|t| encoder.encode(t.as_ref())).collect();
        for (offset, v) in encoded.into_iter().enumerate() {
            let row = chunk_idx * BATCH_CHUNK + offset;
            out.row_mut(row).copy_from_slice(v?.as_slice());
        }
    }
    Ok(out)
}
