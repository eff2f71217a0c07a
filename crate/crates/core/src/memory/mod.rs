//! Dense key-value memory: construction, exact and graph search, per-epoch
//! snapshots and persistence.

mod hnsw;
mod persist;
mod search;
mod store;

use std::sync::Arc;

pub use hnsw::{hnsw_build, hnsw_search, HnswIndex, HnswParams};
pub use persist::{load_memory, read_memory, save_memory, write_memory, MEMORY_MAGIC, MEMORY_VERSION};
pub use search::{exact_search, Hit, RetrievalResult};
pub use store::{build_memory, refresh_memory, KeyValueMemory, MemoryEntry};

/// Read-only view of a memory taken at the start of an epoch. Later model
/// updates or refreshes never change what it serves.
#[derive(Clone, Debug)]
pub struct MemorySnapshot {
    inner: Arc<KeyValueMemory>,
}

impl MemorySnapshot {
    pub fn memory(&self) -> &KeyValueMemory {
        &self.inner
    }

    pub fn epoch(&self) -> u64 {
        self.inner.epoch()
    }

    pub fn search(&self, q: &[f64], k: usize) -> crate::Result<RetrievalResult> {
        exact_search(&self.inner, q, k)
    }
}

pub fn snapshot_for_epoch(memory: &KeyValueMemory) -> MemorySnapshot {
    MemorySnapshot {
        inner: Arc::new(memory.clone()),
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::{KeyValueMemory, MemoryEntry};
    use crate::numerics::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A P=1 memory whose flattened keys are the given vectors.
    pub(crate) fn flat_memory(vectors: &[Vec<f64>]) -> KeyValueMemory {
        let h = vectors[0].len();
        let entries = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let m = Matrix::row_vector(v.clone());
                MemoryEntry::new(i as u64, &m, &m, format!("q{i}"), format!("a{i}"))
            })
            .collect();
        KeyValueMemory::from_entries(entries, 1, h, 0).unwrap()
    }

    pub(crate) fn random_vectors(n: usize, h: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    pub(crate) fn random_unit_vectors(n: usize, h: usize, seed: u64) -> Vec<Vec<f64>> {
        random_vectors(n, h, seed)
            .into_iter()
            .map(|v| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect()
    }
}
