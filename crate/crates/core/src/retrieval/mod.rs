//! Nearest-neighbor indexes over synonym embeddings and mention linking.
//!
//! Results are always ordered by descending cosine, then ascending
//! concept_id, then ascending synonym string, so rankings are reproducible
//! even when scores tie.

mod hnsw;
mod persist;

pub use hnsw::HnswParams;
pub use persist::INDEX_MAGIC;

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::encoder::{EmbeddingVector, TextEncoder};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::ontology::ConceptStore;
use hnsw::{HnswGraph, VectorSource};

/// Unit-norm tolerance for index entries.
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub vector: EmbeddingVector,
    pub concept_id: String,
    pub synonym: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub concept_id: String,
    pub synonym: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Exact,
    Hnsw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    graph: Option<HnswGraph>,
}

struct EntryVectors<'a>(&'a [IndexEntry]);

impl VectorSource for EntryVectors<'_> {
    fn vector(&self, id: u32) -> &[f64] {
        self.0[id as usize].vector.as_slice()
    }

    fn count(&self) -> usize {
        self.0.len()
    }
}

/// Ranking order: score descending, then concept_id, synonym, entry position.
fn rank_order(a: (f64, &IndexEntry, usize), b: (f64, &IndexEntry, usize)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.concept_id.cmp(&b.1.concept_id))
        .then_with(|| a.1.synonym.cmp(&b.1.synonym))
        .then_with(|| a.2.cmp(&b.2))
}

fn check_entries(entries: &[IndexEntry]) -> Result<usize> {
    let first = entries
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot build an empty index".into()))?;
    let dim = first.vector.dim();
    for (index, e) in entries.iter().enumerate() {
        if e.vector.dim() != dim {
            return Err(Error::DimensionMismatch {
                index,
                expected: dim,
                actual: e.vector.dim(),
            });
        }
        let norm = e.vector.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "entry {index} ({:?}) is not unit-norm: {norm}",
                e.synonym
            )));
        }
    }
    Ok(dim)
}

/// Encodes every synonym of every concept, in store order.
pub fn entries_from_store<E: TextEncoder>(store: &ConceptStore, encoder: &E) -> Result<Vec<IndexEntry>> {
    let mut keys = Vec::with_capacity(store.synonym_count());
    for c in store.iter() {
        for s in &c.synonyms {
            keys.push((c.concept_id.as_str(), s.as_str()));
        }
    }
    let texts: Vec<&str> = keys.iter().map(|(_, s)| *s).collect();
    let matrix = encoder.encode_batch(&texts)?;
    keys.iter()
        .zip(matrix.iter_rows())
        .map(|((cid, syn), row)| {
            Ok(IndexEntry {
                vector: EmbeddingVector::new(row.to_vec())?,
                concept_id: cid.to_string(),
                synonym: syn.to_string(),
            })
        })
        .collect()
}

impl VectorIndex {
    pub fn build_exact(entries: Vec<IndexEntry>) -> Result<Self> {
        let dim = check_entries(&entries)?;
        Ok(VectorIndex {
            dim,
            entries,
            graph: None,
        })
    }

    pub fn build_hnsw(entries: Vec<IndexEntry>, params: HnswParams) -> Result<Self> {
        let dim = check_entries(&entries)?;
        let graph = HnswGraph::build(&EntryVectors(&entries), params)?;
        Ok(VectorIndex {
            dim,
            entries,
            graph: Some(graph),
        })
    }

    pub fn kind(&self) -> IndexKind {
        if self.graph.is_some() {
            IndexKind::Hnsw
        } else {
            IndexKind::Exact
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn hnsw_params(&self) -> Option<HnswParams> {
        self.graph.as_ref().map(|g| g.params)
    }

    /// Directed HNSW edges as `(level, from, to)`; empty for exact indexes.
    pub fn graph_edges(&self) -> Vec<(usize, u32, u32)> {
        self.graph.as_ref().map(HnswGraph::edges).unwrap_or_default()
    }

    pub fn concept_ids(&self) -> HashSet<&str> {
        self.entries.iter().map(|e| e.concept_id.as_str()).collect()
    }

    pub fn distinct_concepts(&self) -> usize {
        self.concept_ids().len()
    }

    fn ranked(&self, mut scored: Vec<(f64, usize)>, k: usize) -> Vec<RetrievalResult> {
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order((a.0, &self.entries[a.1], a.1), (b.0, &self.entries[b.1], b.1))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, idx))| RetrievalResult {
                concept_id: self.entries[idx].concept_id.clone(),
                synonym: self.entries[idx].synonym.clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }

    /// Top-`k` entries by cosine. Exact indexes (and any request with
    /// `k >= len`) scan every entry; HNSW indexes search with
    /// `ef = max(ef_search, k)`.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalResult>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                index: 0,
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let q = query.as_slice();
        let scored: Vec<(f64, usize)> = match &self.graph {
            Some(graph) if k < self.entries.len() => {
                let ef = graph.params.ef_search.max(k);
                graph
                    .search(&EntryVectors(&self.entries), q, ef)
                    .into_iter()
                    .map(|(s, id)| (s, id as usize))
                    .collect()
            }
            _ => self
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| (dot(q, e.vector.as_slice()), i))
                .collect(),
        };
        Ok(self.ranked(scored, k))
    }
}

/// Internal over-fetch before collapsing synonyms to concepts.
pub fn overfetch(k: usize) -> usize {
    (4 * k).max(32)
}

/// Resolves mentions to concepts with an encoder and an index built from the
/// same encoder.
pub struct Linker<'a, E: TextEncoder> {
    encoder: &'a E,
    index: &'a VectorIndex,
    concepts: HashSet<&'a str>,
}

impl<'a, E: TextEncoder> Linker<'a, E> {
    pub fn new(encoder: &'a E, index: &'a VectorIndex) -> Result<Self> {
        if encoder.dim() != index.dim() {
            return Err(Error::DimensionMismatch {
                index: 0,
                expected: index.dim(),
                actual: encoder.dim(),
            });
        }
        Ok(Linker {
            encoder,
            index,
            concepts: index.concept_ids(),
        })
    }

    /// Top-`k` distinct concepts for `mention`, each represented by its best
    /// synonym hit. Starts from [`overfetch`] and widens until `k` concepts
    /// are found or the index is exhausted.
    pub fn link(&self, mention: &str, k: usize) -> Result<Vec<RetrievalResult>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let query = self.encoder.encode(mention)?;
        let mut fetch = overfetch(k);
        loop {
            let hits = self.index.search(&query, fetch)?;
            let exhausted = hits.len() < fetch || fetch >= self.index.len();
            let mut seen = HashSet::new();
            let mut out: Vec<RetrievalResult> = hits
                .into_iter()
                .filter(|h| seen.insert(h.concept_id.clone()))
                .take(k)
                .collect();
            if out.len() >= k || exhausted {
                for (i, r) in out.iter_mut().enumerate() {
                    r.rank = i + 1;
                }
                return Ok(out);
            }
            fetch = fetch.saturating_mul(2).min(self.index.len());
        }
    }

    /// Whether `concept_id` has at least one entry in the index.
    pub fn knows(&self, concept_id: &str) -> bool {
        self.concepts.contains(concept_id)
    }

    pub fn index(&self) -> &VectorIndex {
        self.index
    }
}
