//! Hierarchical navigable small-world graph under inner-product order.
//!
//! Vectors are the flattened keys, used as-is. "Closer" means a larger inner
//! product, and the neighbor-selection heuristic uses the same order.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::{check_query, rank_order, Hit, RetrievalResult};
use super::KeyValueMemory;
use crate::error::{Error, Result};
use crate::numerics::dot_unchecked;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 allows twice as many.
    pub m: usize,
    pub ef_construction: usize,
    /// Default beam width for searches that don't pass one.
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
            return Err(Error::input(format!("M must be at least 2, got {}", self.m)));
        }
        if self.ef_construction < 1 || self.ef_search < 1 {
            return Err(Error::input("ef values must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Cand {
    score: f64,
    node: u32,
}

// Better candidates compare greater: higher score, then lower node.
impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch += 1;
        if self.epoch == u32::MAX {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    /// Marks `node`, returning true if it was not yet seen.
    fn insert(&mut self, node: u32) -> bool {
        let slot = &mut self.marks[node as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Clone, Debug)]
pub struct HnswIndex {
    params: HnswParams,
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f64>,
    /// links[node][layer]
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

impl HnswIndex {
    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    fn vector(&self, node: u32) -> &[f64] {
        let i = node as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    fn score(&self, q: &[f64], node: u32) -> f64 {
        dot_unchecked(q, self.vector(node))
    }

    fn greedy(&self, q: &[f64], mut cur: Cand, layer: usize) -> Cand {
        loop {
            let mut moved = false;
            for &n in &self.links[cur.node as usize][layer] {
                let c = Cand {
                    score: self.score(q, n),
                    node: n,
                };
                if c > cur {
                    cur = c;
                    moved = true;
                }
            }
            if !moved {
                return cur;
            }
        }
    }

    /// Beam search on one layer. Returns up to `ef` candidates, best first.
    fn search_layer(&self, q: &[f64], entry: &[Cand], ef: usize, layer: usize, visited: &mut Visited) -> Vec<Cand> {
        visited.reset();
        let mut frontier: BinaryHeap<Cand> = BinaryHeap::new();
        let mut found: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        for &e in entry {
            if visited.insert(e.node) {
                frontier.push(e);
                found.push(Reverse(e));
                if found.len() > ef {
                    found.pop();
                }
            }
        }
        while let Some(c) = frontier.pop() {
            let worst = found.peek().expect("non-empty").0;
            if found.len() >= ef && c < worst {
                break;
            }
            for &n in &self.links[c.node as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let cand = Cand {
                    score: self.score(q, n),
                    node: n,
                };
                let worst = found.peek().expect("non-empty").0;
                if found.len() < ef || cand > worst {
                    frontier.push(cand);
                    found.push(Reverse(cand));
                    if found.len() > ef {
                        found.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = found.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor already kept, then top up with the pruned ones.
    fn select(&self, sorted: &[Cand], m: usize) -> Vec<u32> {
        let mut kept: Vec<Cand> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in sorted {
            if kept.len() == m {
                break;
            }
            let v = self.vector(c.node);
            if kept.iter().all(|r| dot_unchecked(v, self.vector(r.node)) < c.score) {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() == m {
                break;
            }
            kept.push(c);
        }
        kept.into_iter().map(|c| c.node).collect()
    }

    fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, node: u32, level: usize, visited: &mut Visited) {
        self.links.push(vec![Vec::new(); level + 1]);
        if node == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let q = self.vector(node).to_vec();
        let mut cur = Cand {
            score: self.score(&q, self.entry),
            node: self.entry,
        };
        for layer in (level + 1..=self.max_level).rev() {
            cur = self.greedy(&q, cur, layer);
        }
        let mut entry = vec![cur];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&q, &entry, self.params.ef_construction, layer, visited);
            let chosen = self.select(&found, self.params.m);
            for &n in &chosen {
                self.links[n as usize][layer].push(node);
                if self.links[n as usize][layer].len() > self.cap(layer) {
                    self.shrink(n, layer);
                }
            }
            self.links[node as usize][layer] = chosen;
            entry = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = node;
        }
    }

    fn shrink(&mut self, node: u32, layer: usize) {
        let base = self.vector(node);
        let mut cands: Vec<Cand> = self.links[node as usize][layer]
            .iter()
            .map(|&n| Cand {
                score: dot_unchecked(base, self.vector(n)),
                node: n,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        let kept = self.select(&cands, self.cap(layer));
        self.links[node as usize][layer] = kept;
    }

    /// Approximate top-k with beam width `ef_search`.
    pub fn search(&self, q: &[f64], k: usize, ef_search: usize) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(Error::input("k must be at least 1"));
        }
        if ef_search < k {
            return Err(Error::input(format!(
                "ef_search ({ef_search}) must be at least k ({k})"
            )));
        }
        check_query(q, self.dim)?;
        let mut cur = Cand {
            score: self.score(q, self.entry),
            node: self.entry,
        };
        for layer in (1..=self.max_level).rev() {
            cur = self.greedy(q, cur, layer);
        }
        let mut visited = Visited::new(self.len());
        let found = self.search_layer(q, &[cur], ef_search, 0, &mut visited);
        let mut hits: Vec<Hit> = found
            .iter()
            .map(|c| Hit {
                id: self.ids[c.node as usize],
                score: c.score,
            })
            .collect();
        hits.sort_by(rank_order);
        hits.truncate(k);
        Ok(RetrievalResult { query_id: None, hits })
    }

    /// True if every indexed id is present in `memory`.
    pub fn covers(&self, memory: &KeyValueMemory) -> bool {
        self.ids.iter().all(|&id| memory.get(id).is_some())
    }
}

/// Builds the graph over the memory's flattened keys, inserting in entry
/// order. Level draws come from `params.seed`, so the result is reproducible.
pub fn hnsw_build(memory: &KeyValueMemory, params: HnswParams) -> Result<HnswIndex> {
    params.validate()?;
    if memory.is_empty() {
        return Err(Error::state("memory is empty"));
    }
    if memory.len() > u32::MAX as usize {
        return Err(Error::input("too many entries for the index"));
    }
    let dim = memory.hidden();
    let mut index = HnswIndex {
        params,
        dim,
        ids: memory.entries().iter().map(|e| e.id).collect(),
        vectors: memory
            .entries()
            .iter()
            .flat_map(|e| e.key_flat.iter().copied())
            .collect(),
        links: Vec::with_capacity(memory.len()),
        entry: 0,
        max_level: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let ml = 1.0 / (params.m as f64).ln();
    let mut visited = Visited::new(memory.len());
    for node in 0..memory.len() as u32 {
        let u: f64 = 1.0 - rng.gen::<f64>();
        let level = (-u.ln() * ml).floor() as usize;
        index.insert(node, level, &mut visited);
    }
    Ok(index)
}

pub fn hnsw_search(index: &HnswIndex, q: &[f64], k: usize, ef_search: usize) -> Result<RetrievalResult> {
    index.search(q, k, ef_search)
}
