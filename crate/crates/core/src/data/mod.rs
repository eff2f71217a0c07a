//! Tokenization, knowledge-source ingestion and answer normalization.

mod normalize;
mod source;
mod vocab;

pub(crate) use normalize::contains_token_run;
pub use normalize::{normalize_answer, normalize_target_long, STOP_WORDS};
pub use source::{load_knowledge_source, parse_knowledge_source, write_knowledge_source, QAPair, TrainingExample};
pub use vocab::{tokenize, Vocab, BOS, EOS, PAD, PREFIX_BASE, UNK};
