use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, EOS};
use crate::error::{Error, Result};

/// One question-answer record of a knowledge source or task dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: u64,
    pub question: String,
    pub answer: String,
}

impl QAPair {
    pub fn new(id: u64, question: impl Into<String>, answer: impl Into<String>) -> Self {
        QAPair {
            id,
            question: question.into(),
            answer: answer.into(),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<u64>,
    question: Option<String>,
    answer: Option<String>,
}

/// Reads a JSONL knowledge source: one object per line with `question` and
/// `answer` strings and an optional integer `id`. Blank lines are skipped.
pub fn load_knowledge_source(path: impl AsRef<Path>) -> Result<Vec<QAPair>> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_knowledge_source(BufReader::new(file))
}

pub fn parse_knowledge_source<R: BufRead>(reader: R) -> Result<Vec<QAPair>> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let question = raw
            .question
            .filter(|q| !q.trim().is_empty())
            .ok_or_else(|| parse_err("missing or empty \"question\"".into()))?;
        let answer = raw
            .answer
            .filter(|a| !a.trim().is_empty())
            .ok_or_else(|| parse_err("missing or empty \"answer\"".into()))?;
        let id = raw.id.unwrap_or(pairs.len() as u64);
        if !seen.insert(id) {
            return Err(parse_err(format!("duplicate id {id}")));
        }
        pairs.push(QAPair { id, question, answer });
    }
    Ok(pairs)
}

/// Writes pairs in the knowledge-source JSONL format.
pub fn write_knowledge_source(path: impl AsRef<Path>, pairs: &[QAPair]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut out, p).map_err(|e| Error::format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// A tokenized input/target pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    /// Raw target text, used for lexical matching.
    pub target_text: String,
    /// Memory entry ids retrieved for this example in the current epoch.
    pub cached_retrieval: Option<Vec<u64>>,
}

impl TrainingExample {
    /// Tokenizes a pair; both sequences end with EOS and must fit the limits.
    pub fn from_pair(vocab: &Vocab, pair: &QAPair, max_input: usize, max_target: usize) -> Result<Self> {
        let input = vocab.encode_with_eos(&pair.question);
        let target = vocab.encode_with_eos(&pair.answer);
        if input.len() > max_input {
            return Err(Error::input(format!(
                "question of pair {} has {} tokens, limit {max_input}",
                pair.id,
                input.len()
            )));
        }
        if target.len() > max_target {
            return Err(Error::input(format!(
                "answer of pair {} has {} tokens, limit {max_target}",
                pair.id,
                target.len()
            )));
        }
        debug_assert_eq!(input.last(), Some(&EOS));
        Ok(TrainingExample {
            input,
            target,
            target_text: pair.answer.clone(),
            cached_retrieval: None,
        })
    }
}
