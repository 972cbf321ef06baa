//! Hierarchical navigable small-world graph over unit vectors.
//!
//! Similarity is the dot product. Construction is single-threaded and fully
//! determined by the seed and the insertion order: node levels come from a
//! seeded ChaCha8 stream, and every heap ordering breaks score ties by node
//! id, so two builds over the same input produce the same edge sets.
//!
//! Layer 0 holds up to `LAYER0_FACTOR * m` links per node, and a newly
//! inserted node fills all of them using the diversity heuristic. When a
//! neighbor's list overflows, it keeps its closest links. On isotropic random
//! data in 64 dimensions the common `2 * m` layer-0 degree reaches only about
//! 0.83 recall@10 at `ef_search = 64`; the wider base layer brings that
//! above 0.95 at the same `m` and `ef` values.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::seed::rng_for;

/// Hard cap on node level; reached with probability ~M^-16.
const MAX_LEVEL: usize = 16;

/// Layer-0 degree as a multiple of `m`.
pub const LAYER0_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HnswParams {
    /// Max neighbors per node on upper layers; layer 0 allows
    /// [`LAYER0_FACTOR`]` * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config(format!("HNSW m must be at least 2, got {}", self.m)));
        }
        if self.ef_construction == 0 || self.ef_search == 0 {
            return Err(Error::Config("HNSW ef values must be positive".into()));
        }
        Ok(())
    }

    fn max_neighbors(&self, level: usize) -> usize {
        if level == 0 {
            LAYER0_FACTOR * self.m
        } else {
            self.m
        }
    }
}

/// Score with a deterministic total order: higher score first, then lower id.
#[derive(Debug, Clone, Copy)]
struct Scored {
    score: f64,
    id: u32,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    /// `Greater` means "better".
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HnswGraph {
    pub params: HnswParams,
    /// `links[node][level]` holds neighbor ids.
    pub links: Vec<Vec<Vec<u32>>>,
    pub entry_point: u32,
    pub max_level: usize,
}

/// Read access to the vectors a graph was built over.
pub(crate) trait VectorSource {
    fn vector(&self, id: u32) -> &[f64];
    fn count(&self) -> usize;
}

impl HnswGraph {
    pub fn build(source: &impl VectorSource, params: HnswParams) -> Result<Self> {
        params.validate()?;
        let n = source.count();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot build an empty index".into()));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many entries for HNSW".into()));
        }
        let level_scale = 1.0 / (params.m as f64).ln();
        let mut rng = rng_for(params.seed);
        let mut graph = HnswGraph {
            params,
            links: Vec::with_capacity(n),
            entry_point: 0,
            max_level: 0,
        };
        for id in 0..n as u32 {
            // uniform in (0, 1]
            let u: f64 = 1.0 - rng.gen::<f64>();
            let level = ((-u.ln() * level_scale).floor() as usize).min(MAX_LEVEL);
            graph.insert(source, id, level);
        }
        Ok(graph)
    }

    fn insert(&mut self, source: &impl VectorSource, id: u32, level: usize) {
        self.links.push(vec![Vec::new(); level + 1]);
        if id == 0 {
            self.entry_point = 0;
            self.max_level = level;
            return;
        }
        let query = source.vector(id);
        let mut entry = Scored {
            score: dot(query, source.vector(self.entry_point)),
            id: self.entry_point,
        };
        for lev in (level + 1..=self.max_level).rev() {
            entry = self.greedy(source, query, entry, lev);
        }
        let mut entries = vec![entry];
        for lev in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(source, query, &entries, self.params.ef_construction, lev);
            let chosen = select_neighbors(source, &found, self.params.max_neighbors(lev));
            self.links[id as usize][lev] = chosen.iter().map(|s| s.id).collect();
            for nb in &chosen {
                self.connect(source, nb.id, id, lev);
            }
            entries = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry_point = id;
        }
    }

    /// Adds `to` to `from`'s neighbor list; an overflowing list keeps its
    /// closest links.
    fn connect(&mut self, source: &impl VectorSource, from: u32, to: u32, level: usize) {
        let cap = self.params.max_neighbors(level);
        let list = &mut self.links[from as usize][level];
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let base = source.vector(from);
        let mut cands: Vec<Scored> = list
            .iter()
            .map(|&id| Scored {
                score: dot(base, source.vector(id)),
                id,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        self.links[from as usize][level] = cands.iter().take(cap).map(|s| s.id).collect();
    }

    fn greedy(&self, source: &impl VectorSource, query: &[f64], mut best: Scored, level: usize) -> Scored {
        loop {
            let mut improved = false;
            for &nb in &self.links[best.id as usize][level] {
                let cand = Scored {
                    score: dot(query, source.vector(nb)),
                    id: nb,
                };
                if cand > best {
                    best = cand;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nodes, best first.
    fn search_layer(
        &self,
        source: &impl VectorSource,
        query: &[f64],
        entries: &[Scored],
        ef: usize,
        level: usize,
    ) -> Vec<Scored> {
        let mut visited: HashSet<u32> = entries.iter().map(|e| e.id).collect();
        let mut frontier: BinaryHeap<Scored> = entries.iter().copied().collect();
        // min-heap of the current best `ef`
        let mut best: BinaryHeap<std::cmp::Reverse<Scored>> =
            entries.iter().copied().map(std::cmp::Reverse).collect();
        while best.len() > ef {
            best.pop();
        }

        while let Some(cand) = frontier.pop() {
            let worst = best.peek().map(|r| r.0);
            if let Some(w) = worst {
                if best.len() >= ef && cand < w {
                    break;
                }
            }
            for &nb in &self.links[cand.id as usize][level] {
                if !visited.insert(nb) {
                    continue;
                }
                let s = Scored {
                    score: dot(query, source.vector(nb)),
                    id: nb,
                };
                let admit = best.len() < ef || best.peek().is_some_and(|w| s > w.0);
                if admit {
                    frontier.push(s);
                    best.push(std::cmp::Reverse(s));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Up to `ef` approximate nearest nodes as `(score, id)`, best first.
    pub fn search(&self, source: &impl VectorSource, query: &[f64], ef: usize) -> Vec<(f64, u32)> {
        let mut entry = Scored {
            score: dot(query, source.vector(self.entry_point)),
            id: self.entry_point,
        };
        for lev in (1..=self.max_level).rev() {
            entry = self.greedy(source, query, entry, lev);
        }
        self.search_layer(source, query, &[entry], ef.max(1), 0)
            .into_iter()
            .map(|s| (s.score, s.id))
            .collect()
    }

    /// Every directed edge as `(level, from, to)`, sorted.
    pub fn edges(&self) -> Vec<(usize, u32, u32)> {
        let mut out = Vec::new();
        for (from, levels) in self.links.iter().enumerate() {
            for (lev, nbs) in levels.iter().enumerate() {
                out.extend(nbs.iter().map(|&to| (lev, from as u32, to)));
            }
        }
        out.sort_unstable();
        out
    }
}

/// Neighbor-diversity heuristic: keep a candidate only if it is closer to
/// the base (its `score`) than to any already kept neighbor, then top up with the best
/// rejected candidates. `candidates` must be sorted best first.
fn select_neighbors(source: &impl VectorSource, candidates: &[Scored], m: usize) -> Vec<Scored> {
    let mut kept: Vec<Scored> = Vec::with_capacity(m);
    let mut rejected = Vec::new();
    for &c in candidates {
        if kept.len() >= m {
            break;
        }
        let cv = source.vector(c.id);
        let diverse = kept.iter().all(|k| dot(cv, source.vector(k.id)) < c.score);
        if diverse {
            kept.push(c);
        } else {
            rejected.push(c);
        }
    }
    for r in rejected {
        if kept.len() >= m {
            break;
        }
        kept.push(r);
    }
    kept
}
