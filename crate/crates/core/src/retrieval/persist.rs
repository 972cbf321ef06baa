//! `adenorm-idx-v1` binary container: entries, HNSW parameters, and the full
//! graph, so a loaded index answers queries bit-identically to the built one.

use std::fs;
use std::path::Path;

use super::hnsw::{HnswGraph, HnswParams};
use super::{check_entries, IndexEntry, VectorIndex};
use crate::codec::{Decoder, Encoder};
use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &str = "adenorm-idx-v1";

const KIND_EXACT: u8 = 0;
const KIND_HNSW: u8 = 1;

fn corrupt(message: impl Into<String>) -> Error {
    Error::Format {
        what: "index",
        message: message.into(),
    }
}

impl VectorIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(INDEX_MAGIC);
        enc.u8(if self.graph.is_some() { KIND_HNSW } else { KIND_EXACT });
        enc.usize(self.dim);
        enc.usize(self.entries.len());
        for e in &self.entries {
            enc.str(&e.concept_id);
            enc.str(&e.synonym);
            enc.f64s(e.vector.as_slice());
        }
        if let Some(g) = &self.graph {
            enc.usize(g.params.m);
            enc.usize(g.params.ef_construction);
            enc.usize(g.params.ef_search);
            enc.u64(g.params.seed);
            enc.u32(g.entry_point);
            enc.usize(g.max_level);
            for levels in &g.links {
                enc.usize(levels.len());
                for nbs in levels {
                    enc.usize(nbs.len());
                    for &nb in nbs {
                        enc.u32(nb);
                    }
                }
            }
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(bytes, INDEX_MAGIC, "index")?;
        let kind = dec.u8()?;
        let dim = dec.usize()?;
        let n = dec.len(16 + 8 * dim)?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let concept_id = dec.str()?;
            let synonym = dec.str()?;
            let vector = EmbeddingVector::new(dec.f64s(dim)?)?;
            entries.push(IndexEntry {
                vector,
                concept_id,
                synonym,
            });
        }
        check_entries(&entries)?;
        let graph = match kind {
            KIND_EXACT => None,
            KIND_HNSW => {
                let params = HnswParams {
                    m: dec.usize()?,
                    ef_construction: dec.usize()?,
                    ef_search: dec.usize()?,
                    seed: dec.u64()?,
                };
                params.validate()?;
                let entry_point = dec.u32()?;
                let max_level = dec.usize()?;
                let mut links = Vec::with_capacity(n);
                for _ in 0..n {
                    let n_levels = dec.len(8)?;
                    let mut levels = Vec::with_capacity(n_levels);
                    for _ in 0..n_levels {
                        let count = dec.len(4)?;
                        let mut nbs = Vec::with_capacity(count);
                        for _ in 0..count {
                            let nb = dec.u32()?;
                            if nb as usize >= n {
                                return Err(corrupt(format!("neighbor {nb} out of range")));
                            }
                            nbs.push(nb);
                        }
                        levels.push(nbs);
                    }
                    links.push(levels);
                }
                let ep_levels = links.get(entry_point as usize).map_or(0, Vec::len);
                if ep_levels != max_level + 1 || links.iter().any(|l| l.is_empty() || l.len() > max_level + 1) {
                    return Err(corrupt("inconsistent graph levels"));
                }
                Some(HnswGraph {
                    params,
                    links,
                    entry_point,
                    max_level,
                })
            }
            other => return Err(corrupt(format!("unknown index kind {other}"))),
        };
        dec.finish()?;
        Ok(VectorIndex { dim, entries, graph })
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
