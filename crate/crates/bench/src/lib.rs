//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kvmem_core::data::{QAPair, Vocab};
use kvmem_core::memory::{build_memory, KeyValueMemory, MemoryEntry};
use kvmem_core::model::{LayerTaps, Model, ModelConfig};
use kvmem_core::Matrix;

/// `n` seeded random unit vectors.
pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// A memory of single-row blocks holding `vectors` as keys and values.
pub fn vector_memory(vectors: &[Vec<f64>]) -> KeyValueMemory {
    let entries = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let block = Matrix::row_vector(v.clone());
            MemoryEntry::new(i as u64, &block, &block, format!("q{i}"), format!("a{i}"))
        })
        .collect();
    KeyValueMemory::from_entries(entries, 1, vectors[0].len(), 0).expect("vectors share one width")
}

/// Untrained model, vocabulary, questions and their memory, for timing.
pub struct QaFixture {
    pub model: Model,
    pub vocab: Vocab,
    pub pairs: Vec<QAPair>,
    pub memory: KeyValueMemory,
}

impl QaFixture {
    pub fn new(entries: usize, hidden: usize, taps: LayerTaps) -> Self {
        let pairs: Vec<QAPair> = (0..entries as u64)
            .map(|i| {
                QAPair::new(
                    i,
                    format!("which port did ship{i} leave in year{} ?", i % 31),
                    format!("port{}", i % 97),
                )
            })
            .collect();
        let text: Vec<&str> = pairs
            .iter()
            .flat_map(|p| [p.question.as_str(), p.answer.as_str()])
            .collect();
        let vocab = Vocab::build(&text, usize::MAX, 2).expect("non-empty corpus");
        let cfg = ModelConfig {
            hidden,
            heads: 4,
            ff_hidden: 4 * hidden,
            ..ModelConfig::twelve_layer(vocab.len(), taps)
        };
        let model = Model::new(cfg, 0).expect("valid config");
        let memory = build_memory(&pairs, &model, &vocab).expect("questions fit the model");
        QaFixture {
            model,
            vocab,
            pairs,
            memory,
        }
    }

    pub fn inputs(&self, n: usize) -> Vec<Vec<usize>> {
        self.pairs
            .iter()
            .take(n)
            .map(|p| self.vocab.encode_with_eos(&p.question))
            .collect()
    }
}
