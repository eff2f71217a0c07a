use rand::Rng;

use super::TaskType;
use crate::data::{contains_token_run, normalize_answer, normalize_target_long};
use crate::error::{Error, Result};
use crate::memory::{Hit, KeyValueMemory, RetrievalResult};
use crate::numerics::{dot_unchecked, softmax_rows, Matrix};

/// Weakly supervised split of a candidate pool.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeakLabels {
    /// Matching entries with their retrieval scores, in pool order.
    pub positives: Vec<Hit>,
    /// The highest-scored non-matching entries.
    pub negatives: Vec<u64>,
}

impl WeakLabels {
    pub fn positive_ids(&self) -> Vec<u64> {
        self.positives.iter().map(|h| h.id).collect()
    }
}

/// True if a stored answer lexically matches the target under `task`.
pub fn answer_matches(answer: &str, target: &str, task: TaskType) -> bool {
    let answer = normalize_answer(answer);
    match task {
        TaskType::Short => answer == normalize_answer(target),
        TaskType::Long => contains_token_run(&normalize_target_long(target), &answer),
    }
}

/// Labels every entry of the pool. The pool is ranked best first, so the
/// negatives are the first `m` non-matching hits.
pub fn select_positives(
    result: &RetrievalResult,
    memory: &KeyValueMemory,
    target: &str,
    task: TaskType,
    m: usize,
) -> Result<WeakLabels> {
    let mut labels = WeakLabels::default();
    for hit in &result.hits {
        let entry = memory
            .get(hit.id)
            .ok_or_else(|| Error::state(format!("retrieved id {} is not in the memory", hit.id)))?;
        if answer_matches(&entry.answer, target, task) {
            labels.positives.push(*hit);
        } else if labels.negatives.len() < m {
            labels.negatives.push(hit.id);
        }
    }
    Ok(labels)
}

/// Softmax over `⟨q, k⟩` for the positives' stored keys, in `labels` order.
pub fn positive_probabilities(labels: &WeakLabels, q: &[f64], memory: &KeyValueMemory) -> Result<Vec<f64>> {
    if labels.positives.is_empty() {
        return Err(Error::contract("cannot sample from an empty positive set"));
    }
    let sims = labels
        .positives
        .iter()
        .map(|h| {
            let e = memory
                .get(h.id)
                .ok_or_else(|| Error::state(format!("positive {} is not in the memory", h.id)))?;
            if e.key_flat.len() != q.len() {
                return Err(Error::input("query and key sizes differ"));
            }
            Ok(dot_unchecked(q, &e.key_flat))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(softmax_rows(&Matrix::row_vector(sims)).into_data())
}

/// Draws one positive id from the softmax over similarities.
pub fn sample_positive<R: Rng + ?Sized>(
    labels: &WeakLabels,
    q: &[f64],
    memory: &KeyValueMemory,
    rng: &mut R,
) -> Result<u64> {
    let probs = positive_probabilities(labels, q, memory)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (hit, p) in labels.positives.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return Ok(hit.id);
        }
    }
    Ok(labels.positives.last().expect("non-empty").id)
}
