//! Hashed character n-gram encoder.
//!
//! A text is normalized, padded with `#` on both sides, and cut into character
//! n-grams for every `n` in `ngram_min..=ngram_max`. Each gram's UTF-8 bytes
//! are hashed with XXH64 under [`NGRAM_HASH_SEED`] and reduced modulo
//! `num_buckets`. The embedding is the mean of the bucket rows, multiplied by
//! a `dim x dim` projection, then L2-normalized.
//!
//! Bucket rows start as `uniform(-1/sqrt(dim), 1/sqrt(dim))` draws. Rather
//! than materializing the full `num_buckets x dim` table, an untouched row is
//! regenerated on demand from a ChaCha8 stream keyed by `(seed, bucket)`; only
//! rows changed by training are stored. The two views are indistinguishable
//! through the public API.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use super::{EmbeddingVector, TextEncoder, DEGENERATE_NORM};
use crate::codec;
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm};
use crate::text::normalize;

/// XXH64 seed for n-gram hashing (ASCII "adenorm1").
pub const NGRAM_HASH_SEED: u64 = 0x6164_656e_6f72_6d31;

pub const CHECKPOINT_MAGIC: &str = "adenorm-enc-v1";

const BOUNDARY: char = '#';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub num_buckets: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 256,
            ngram_min: 3,
            ngram_max: 5,
            num_buckets: 262_144,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(Error::Config(format!(
                "need 1 <= ngram_min <= ngram_max, got {}..={}",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.dim > self.num_buckets {
            return Err(Error::Config(format!(
                "dim {} exceeds num_buckets {}",
                self.dim, self.num_buckets
            )));
        }
        if self.num_buckets > u32::MAX as usize {
            return Err(Error::Config("num_buckets must fit in 32 bits".into()));
        }
        Ok(())
    }
}

/// Bucket of one n-gram (its UTF-8 bytes).
pub fn ngram_bucket(gram: &str, num_buckets: usize) -> u32 {
    (xxh64(gram.as_bytes(), NGRAM_HASH_SEED) % num_buckets as u64) as u32
}

/// Bucket indices of all boundary-padded character n-grams of `text`, in
/// generation order (by `n`, then by start position).
pub fn hash_ngrams(text: &str, config: &EncoderConfig) -> Result<Vec<u32>> {
    let text = normalize(text);
    if text.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut padded = String::with_capacity(text.len() + 2);
    padded.push(BOUNDARY);
    padded.push_str(&text);
    padded.push(BOUNDARY);
    // byte offsets of every char boundary, including the end
    let bounds: Vec<usize> = padded
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(padded.len()))
        .collect();
    let n_chars = bounds.len() - 1;

    let mut out = Vec::new();
    for n in config.ngram_min..=config.ngram_max {
        if n > n_chars {
            break;
        }
        for start in 0..=n_chars - n {
            out.push(ngram_bucket(&padded[bounds[start]..bounds[start + n]], config.num_buckets));
        }
    }
    Ok(out)
}

/// Trainable encoder: bucket embedding table plus a square projection.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramEncoder {
    config: EncoderConfig,
    /// Rows that differ from their seeded initial value.
    rows: BTreeMap<u32, Vec<f64>>,
    /// Row-major `dim x dim`; `hidden = pooled · projection`.
    projection: Vec<f64>,
}

/// Cached forward pass of one text, enough to backpropagate.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Distinct buckets with their occurrence counts, ascending by bucket.
    pub buckets: Vec<(u32, u32)>,
    pub gram_count: usize,
    pub pooled: Vec<f64>,
    pub hidden_norm: f64,
    /// Unit-norm output.
    pub output: Vec<f64>,
}

/// Accumulated parameter gradients for one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub projection: Vec<f64>,
    pub rows: BTreeMap<u32, Vec<f64>>,
}

impl Gradients {
    pub fn zeros(dim: usize) -> Self {
        Gradients {
            projection: vec![0.0; dim * dim],
            rows: BTreeMap::new(),
        }
    }
}

impl NgramEncoder {
    /// Seeded initial state with identity projection.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.dim;
        let mut projection = vec![0.0; dim * dim];
        for i in 0..dim {
            projection[i * dim + i] = 1.0;
        }
        Ok(NgramEncoder {
            config,
            rows: BTreeMap::new(),
            projection,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut [f64] {
        &mut self.projection
    }

    /// Number of bucket rows that have been modified from their initial value.
    pub fn materialized_rows(&self) -> usize {
        self.rows.len()
    }

    fn initial_row(&self, bucket: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(u64::from(bucket));
        let bound = 1.0 / (self.config.dim as f64).sqrt();
        (0..self.config.dim).map(|_| rng.gen_range(-bound..bound)).collect()
    }

    /// Current value of a bucket row.
    pub fn row(&self, bucket: u32) -> Vec<f64> {
        match self.rows.get(&bucket) {
            Some(r) => r.clone(),
            None => self.initial_row(bucket),
        }
    }

    /// Mutable access to a bucket row, materializing it on first use.
    pub fn row_mut(&mut self, bucket: u32) -> &mut Vec<f64> {
        if !self.rows.contains_key(&bucket) {
            let init = self.initial_row(bucket);
            self.rows.insert(bucket, init);
        }
        self.rows.get_mut(&bucket).unwrap()
    }

    /// Overwrites a bucket row.
    pub fn set_row(&mut self, bucket: u32, values: Vec<f64>) -> Result<()> {
        if values.len() != self.config.dim {
            return Err(Error::InvalidArgument(format!(
                "row has {} values, expected {}",
                values.len(),
                self.config.dim
            )));
        }
        if bucket as usize >= self.config.num_buckets {
            return Err(Error::InvalidArgument(format!("bucket {bucket} out of range")));
        }
        self.rows.insert(bucket, values);
        Ok(())
    }

    pub fn forward(&self, text: &str) -> Result<Forward> {
        let grams = hash_ngrams(text, &self.config)?;
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for g in &grams {
            *counts.entry(*g).or_insert(0) += 1;
        }
        let dim = self.config.dim;
        let n = grams.len() as f64;
        let mut pooled = vec![0.0; dim];
        for (&bucket, &count) in &counts {
            let weight = f64::from(count);
            let add = |row: &[f64], pooled: &mut [f64]| {
                for (p, r) in pooled.iter_mut().zip(row) {
                    *p += weight * r;
                }
            };
            match self.rows.get(&bucket) {
                Some(row) => add(row, &mut pooled),
                None => add(&self.initial_row(bucket), &mut pooled),
            }
        }
        for p in &mut pooled {
            *p /= n;
        }

        let mut hidden = vec![0.0; dim];
        for (i, &p) in pooled.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let prow = &self.projection[i * dim..(i + 1) * dim];
            for (h, w) in hidden.iter_mut().zip(prow) {
                *h += p * w;
            }
        }
        let hidden_norm = l2_norm(&hidden);
        if !hidden_norm.is_finite() {
            return Err(Error::NonFinite("hidden activation".into()));
        }
        if hidden_norm < DEGENERATE_NORM {
            return Err(Error::DegenerateEmbedding { norm: hidden_norm });
        }
        let output = hidden.iter().map(|h| h / hidden_norm).collect();
        Ok(Forward {
            buckets: counts.into_iter().collect(),
            gram_count: grams.len(),
            pooled,
            hidden_norm,
            output,
        })
    }

    /// Adds the parameter gradient of a scalar loss, given its gradient with
    /// respect to the unit-norm output `fwd.output`, into `grads`.
    pub fn backward(&self, fwd: &Forward, grad_output: &[f64], grads: &mut Gradients) {
        let dim = self.config.dim;
        debug_assert_eq!(grad_output.len(), dim);
        // through y = h / |h|
        let y_dot_g = dot(&fwd.output, grad_output);
        let grad_hidden: Vec<f64> = grad_output
            .iter()
            .zip(&fwd.output)
            .map(|(g, y)| (g - y * y_dot_g) / fwd.hidden_norm)
            .collect();

        let mut grad_pooled = vec![0.0; dim];
        for i in 0..dim {
            let prow = &self.projection[i * dim..(i + 1) * dim];
            grad_pooled[i] = dot(prow, &grad_hidden);
            let p = fwd.pooled[i];
            if p != 0.0 {
                let grow = &mut grads.projection[i * dim..(i + 1) * dim];
                for (g, gh) in grow.iter_mut().zip(&grad_hidden) {
                    *g += p * gh;
                }
            }
        }

        let n = fwd.gram_count as f64;
        for &(bucket, count) in &fwd.buckets {
            let scale = f64::from(count) / n;
            let entry = grads.rows.entry(bucket).or_insert_with(|| vec![0.0; dim]);
            for (g, gp) in entry.iter_mut().zip(&grad_pooled) {
                *g += scale * gp;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.projection.iter().all(|v| v.is_finite())
            && self.rows.values().flatten().all(|v| v.is_finite())
    }

    /// Serializes to the `adenorm-enc-v1` binary container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = codec::Encoder::new(CHECKPOINT_MAGIC);
        let c = &self.config;
        enc.usize(c.dim);
        enc.usize(c.ngram_min);
        enc.usize(c.ngram_max);
        enc.usize(c.num_buckets);
        enc.u64(c.seed);
        enc.f64s(&self.projection);
        enc.usize(self.rows.len());
        for (bucket, row) in &self.rows {
            enc.u32(*bucket);
            enc.f64s(row);
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = codec::Decoder::new(bytes, CHECKPOINT_MAGIC, "encoder checkpoint")?;
        let config = EncoderConfig {
            dim: dec.usize()?,
            ngram_min: dec.usize()?,
            ngram_max: dec.usize()?,
            num_buckets: dec.usize()?,
            seed: dec.u64()?,
        };
        config.validate()?;
        let dim = config.dim;
        let projection = dec.f64s(dim.checked_mul(dim).ok_or(Error::Config("dim overflow".into()))?)?;
        let n_rows = dec.len(4 + 8 * dim)?;
        let mut rows = BTreeMap::new();
        for _ in 0..n_rows {
            let bucket = dec.u32()?;
            if bucket as usize >= config.num_buckets {
                return Err(Error::Format {
                    what: "encoder checkpoint",
                    message: format!("bucket {bucket} out of range"),
                });
            }
            rows.insert(bucket, dec.f64s(dim)?);
        }
        dec.finish()?;
        let enc = NgramEncoder {
            config,
            rows,
            projection,
        };
        if !enc.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(enc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl TextEncoder for NgramEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        EmbeddingVector::new(self.forward(text)?.output)
    }
}
