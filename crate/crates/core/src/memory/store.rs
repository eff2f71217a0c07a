use rayon::prelude::*;

use crate::data::{QAPair, Vocab};
use crate::error::{Error, Result};
use crate::model::{flatten, KeyEmbedding, Model, Retrieved, ValueEmbedding};
use crate::numerics::Matrix;

/// One encoded QA pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub id: u64,
    pub key_block: Matrix,
    pub value_block: Matrix,
    /// Row mean of `key_block`.
    pub key_flat: Vec<f64>,
    pub question: String,
    pub answer: String,
}

impl MemoryEntry {
    /// Builds an entry; blocks are rounded to 32-bit precision so the entry
    /// survives persistence unchanged.
    pub fn new(id: u64, key_block: &Matrix, value_block: &Matrix, question: String, answer: String) -> Self {
        let key_block = key_block.round_to_f32();
        let value_block = value_block.round_to_f32();
        let key_flat = flatten(&key_block);
        MemoryEntry {
            id,
            key_block,
            value_block,
            key_flat,
            question,
            answer,
        }
    }

    pub fn as_retrieved(&self, score: f64) -> Retrieved {
        Retrieved {
            key: KeyEmbedding {
                block: self.key_block.clone(),
            },
            value: ValueEmbedding {
                block: self.value_block.clone(),
            },
            score,
        }
    }
}

/// The dense key-value store.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyValueMemory {
    entries: Vec<MemoryEntry>,
    prefix_len: usize,
    hidden: usize,
    epoch: u64,
}

impl KeyValueMemory {
    /// Assembles a memory from entries; dims must agree and ids be unique.
    pub fn from_entries(entries: Vec<MemoryEntry>, prefix_len: usize, hidden: usize, epoch: u64) -> Result<Self> {
        let mut ids = std::collections::HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.key_block.shape() != (prefix_len, hidden) || e.value_block.shape() != (prefix_len, hidden) {
                return Err(Error::input(format!("entry {} has mismatched block dims", e.id)));
            }
            if e.key_flat.len() != hidden {
                return Err(Error::input(format!("entry {} has a flat key of the wrong size", e.id)));
            }
            if !ids.insert(e.id) {
                return Err(Error::input(format!("duplicate entry id {}", e.id)));
            }
        }
        Ok(KeyValueMemory {
            entries,
            prefix_len,
            hidden,
            epoch,
        })
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Entry by id. Ids are usually dense, so the positional slot is tried first.
    pub fn get(&self, id: u64) -> Option<&MemoryEntry> {
        match self.entries.get(id as usize) {
            Some(e) if e.id == id => Some(e),
            _ => self.entries.iter().find(|e| e.id == id),
        }
    }

    /// The stored QA texts, in entry order.
    pub fn pairs(&self) -> Vec<QAPair> {
        self.entries
            .iter()
            .map(|e| QAPair::new(e.id, e.question.clone(), e.answer.clone()))
            .collect()
    }

    /// A memory holding only the listed entries (in the given order).
    pub fn subset(&self, ids: &[u64]) -> Result<Self> {
        let entries = ids
            .iter()
            .map(|&id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::input(format!("no entry {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(entries, self.prefix_len, self.hidden, self.epoch)
    }
}

/// Encodes every pair with the current model. Entries keep input order.
pub fn build_memory(pairs: &[QAPair], model: &Model, vocab: &Vocab) -> Result<KeyValueMemory> {
    build_memory_tagged(pairs, model, vocab, 0)
}

fn build_memory_tagged(pairs: &[QAPair], model: &Model, vocab: &Vocab, epoch: u64) -> Result<KeyValueMemory> {
    if pairs.is_empty() {
        return Err(Error::input("cannot build a memory from zero pairs"));
    }
    if vocab.len() != model.config().vocab_size {
        return Err(Error::state("vocabulary does not match the model"));
    }
    let entries = pairs
        .par_iter()
        .map(|p| {
            encode_pair(p, model, vocab).map_err(|e| Error::Entry {
                id: p.id,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    KeyValueMemory::from_entries(entries, model.prefix_len(), model.hidden(), epoch)
}

fn encode_pair(pair: &QAPair, model: &Model, vocab: &Vocab) -> Result<MemoryEntry> {
    let key = model.encode_key(&vocab.encode_with_eos(&pair.question))?;
    let value = model.encode_value(&vocab.encode_with_eos(&pair.answer))?;
    Ok(MemoryEntry::new(
        pair.id,
        &key.block,
        &value.block,
        pair.question.clone(),
        pair.answer.clone(),
    ))
}

/// Re-encodes all stored QA texts with the current weights; the epoch tag is
/// incremented.
pub fn refresh_memory(memory: &KeyValueMemory, model: &Model, vocab: &Vocab) -> Result<KeyValueMemory> {
    build_memory_tagged(&memory.pairs(), model, vocab, memory.epoch + 1)
}
