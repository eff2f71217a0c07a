use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::KeyValueMemory;
use crate::error::{Error, Result};
use crate::numerics::dot_unchecked;

/// One scored entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
}

/// Ranked hits, best first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: Option<u64>,
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.hits.iter().map(|h| h.score).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn with_query_id(mut self, id: u64) -> Self {
        self.query_id = Some(id);
        self
    }

    pub fn truncated(&self, k: usize) -> Self {
        RetrievalResult {
            query_id: self.query_id,
            hits: self.hits[..k.min(self.hits.len())].to_vec(),
        }
    }
}

/// Higher score first, lower id on ties.
pub(crate) fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

pub(crate) fn check_query(q: &[f64], hidden: usize) -> Result<()> {
    if q.len() != hidden {
        return Err(Error::input(format!("query has {} dims, memory has {hidden}", q.len())));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("query is not finite"));
    }
    Ok(())
}

/// Exact top-k by inner product against the flattened keys.
pub fn exact_search(memory: &KeyValueMemory, q: &[f64], k: usize) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if memory.is_empty() {
        return Err(Error::state("memory is empty"));
    }
    check_query(q, memory.hidden())?;
    let mut hits: Vec<Hit> = memory
        .entries()
        .iter()
        .map(|e| Hit {
            id: e.id,
            score: dot_unchecked(q, &e.key_flat),
        })
        .collect();
    if k < hits.len() {
        hits.select_nth_unstable_by(k - 1, rank_order);
        hits.truncate(k);
    }
    hits.sort_by(rank_order);
    Ok(RetrievalResult { query_id: None, hits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::fixtures::{flat_memory, random_vectors};
    use proptest::prelude::*;

    #[test]
    fn orthogonal_axes() {
        let mem = flat_memory(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = exact_search(&mem, &[1.0, 0.0], 1).unwrap();
        assert_eq!(r.ids(), vec![0]);
        assert_eq!(r.hits[0].score, 1.0);
    }

    #[test]
    fn k_beyond_count_returns_everything_sorted() {
        let mem = flat_memory(&[vec![0.1, 0.0], vec![0.5, 0.0], vec![0.3, 0.0]]);
        let r = exact_search(&mem, &[1.0, 0.0], 10).unwrap();
        assert_eq!(r.ids(), vec![1, 2, 0]);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let mem = flat_memory(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
        let r = exact_search(&mem, &[1.0, 0.0], 2).unwrap();
        assert_eq!(r.ids(), vec![1, 2]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let mem = flat_memory(&[vec![1.0, 0.0]]);
        assert!(matches!(exact_search(&mem, &[1.0, 0.0], 0), Err(Error::Input(_))));
        assert!(matches!(exact_search(&mem, &[1.0], 1), Err(Error::Input(_))));
        let empty = KeyValueMemory::from_entries(Vec::new(), 1, 2, 0).unwrap();
        assert!(matches!(exact_search(&empty, &[1.0, 0.0], 1), Err(Error::State(_))));
    }

    #[test]
    fn agrees_with_brute_force_loop() {
        let vectors = random_vectors(1000, 16, 1);
        let mem = flat_memory(&vectors);
        let queries = random_vectors(50, 16, 2);
        for q in &queries {
            // Plain loop over the stored keys, ranked by a full sort.
            let mut brute: Vec<(f64, u64)> = mem
                .entries()
                .iter()
                .map(|e| (e.key_flat.iter().zip(q).map(|(a, b)| a * b).sum(), e.id))
                .collect();
            brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let expected: Vec<u64> = brute[..10].iter().map(|p| p.1).collect();
            assert_eq!(exact_search(&mem, q, 10).unwrap().ids(), expected);
        }
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_ranking(seed in 0u64..500, alpha in 0.01f64..100.0) {
            let mem = flat_memory(&random_vectors(40, 6, seed));
            let q = random_vectors(1, 6, seed + 1).pop().unwrap();
            let scaled: Vec<f64> = q.iter().map(|v| v * alpha).collect();
            let a = exact_search(&mem, &q, 40).unwrap();
            let b = exact_search(&mem, &scaled, 40).unwrap();
            // Near-ties may swap under rounding; compare only well-separated ranks.
            for (x, y) in a.hits.iter().zip(&b.hits) {
                if x.id != y.id {
                    prop_assert!((x.score - a.hits.iter().find(|h| h.id == y.id).unwrap().score).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn full_ranking_is_consistent_with_pairwise_order(seed in 0u64..500) {
            let mem = flat_memory(&random_vectors(30, 5, seed));
            let q = random_vectors(1, 5, seed + 7).pop().unwrap();
            let r = exact_search(&mem, &q, 30).unwrap();
            prop_assert_eq!(r.len(), 30);
            for w in r.hits.windows(2) {
                prop_assert!(rank_order(&w[0], &w[1]) == Ordering::Less);
            }
        }
    }
}
