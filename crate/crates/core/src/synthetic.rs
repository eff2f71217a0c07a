//! Generated key-value QA task used by the end-to-end tests, benches and CLI.
//!
//! Every fact is `what is the <relation> of <subject> ?` with a two-word
//! answer drawn from a shared word pool. Answers are unique across the
//! memory and carry no information about the question. Train and test questions are short paraphrases
//! (`<subject> <alias> ?`) of distinct memory facts. Pre-training facts use
//! their own subjects and come in two wordings, so a fact's nearest
//! neighbors usually include its twin.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{QAPair, Vocab};
use crate::error::{Error, Result};

/// (memory wording, paraphrase wording)
pub const RELATIONS: [(&str, &str); 8] = [
    ("color", "hue"),
    ("city", "town"),
    ("owner", "keeper"),
    ("sport", "game"),
    ("food", "dish"),
    ("tool", "device"),
    ("band", "group"),
    ("author", "writer"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub subjects: usize,
    pub relations: usize,
    /// Size of the word pool answers are built from.
    pub answer_words: usize,
    pub train: usize,
    pub test: usize,
    pub pretrain_subjects: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            subjects: 500,
            relations: 4,
            answer_words: 100,
            train: 500,
            test: 200,
            pretrain_subjects: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    /// Memory facts, ids `0..subjects·relations`.
    pub facts: Vec<QAPair>,
    /// Paraphrased questions; `train_facts[i]` is the fact answering `train[i]`.
    pub train: Vec<QAPair>,
    pub train_facts: Vec<u64>,
    pub test: Vec<QAPair>,
    pub test_facts: Vec<u64>,
    /// Facts about separate subjects, for pre-training; entries `2i` and
    /// `2i + 1` are two wordings of one fact.
    pub pretrain: Vec<QAPair>,
}

impl SyntheticTask {
    /// Vocabulary over every question and answer of the task.
    pub fn vocab(&self, prefix_len: usize) -> Result<Vocab> {
        let text: Vec<&str> = self
            .facts
            .iter()
            .chain(&self.train)
            .chain(&self.test)
            .chain(&self.pretrain)
            .flat_map(|p| [p.question.as_str(), p.answer.as_str()])
            .collect();
        Vocab::build(&text, usize::MAX, prefix_len)
    }

    /// The first `fraction` of facts in a seeded order, always keeping ids
    /// in ascending order. Nested for increasing fractions.
    pub fn fact_subset(&self, fraction: f64, seed: u64) -> Vec<QAPair> {
        let mut order: Vec<usize> = (0..self.facts.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = (fraction.clamp(0.0, 1.0) * self.facts.len() as f64).round() as usize;
        let mut keep = order[..n].to_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| self.facts[i].clone()).collect()
    }
}

fn fact(id: u64, subject: &str, relation: usize, answer: (usize, usize)) -> QAPair {
    QAPair::new(
        id,
        format!("what is the {} of {subject} ?", RELATIONS[relation].0),
        format!("w{} w{}", answer.0, answer.1),
    )
}

fn paraphrase(id: u64, f: &QAPair, subject: &str, relation: usize) -> QAPair {
    QAPair::new(id, format!("{subject} {} ?", RELATIONS[relation].1), f.answer.clone())
}

pub fn synthetic_task(cfg: &SyntheticConfig) -> Result<SyntheticTask> {
    if cfg.relations == 0 || cfg.relations > RELATIONS.len() {
        return Err(Error::input(format!("relations must be in 1..={}", RELATIONS.len())));
    }
    if cfg.subjects == 0 || cfg.answer_words == 0 {
        return Err(Error::input("subjects and answer_words must be positive"));
    }
    let n = cfg.subjects * cfg.relations;
    let w = cfg.answer_words;
    if w * w < n {
        return Err(Error::input(format!(
            "{w} answer words cannot give {n} distinct answers"
        )));
    }
    if cfg.train + cfg.test > n {
        return Err(Error::input(format!(
            "{} train + {} test questions exceed {n} facts",
            cfg.train, cfg.test
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let answers: Vec<(usize, usize)> = rand::seq::index::sample(&mut rng, w * w, n)
        .into_iter()
        .map(|a| (a / w, a % w))
        .collect();
    let mut facts = Vec::with_capacity(n);
    for s in 0..cfg.subjects {
        for r in 0..cfg.relations {
            let id = facts.len();
            facts.push(fact(id as u64, &format!("s{s}"), r, answers[id]));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let split = |range: &[usize], base: u64| -> (Vec<QAPair>, Vec<u64>) {
        range
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let subject = format!("s{}", i / cfg.relations);
                (
                    paraphrase(base + j as u64, &facts[i], &subject, i % cfg.relations),
                    i as u64,
                )
            })
            .unzip()
    };
    let (train, train_facts) = split(&order[..cfg.train], 0);
    let (test, test_facts) = split(&order[cfg.train..cfg.train + cfg.test], cfg.train as u64);

    let mut pretrain = Vec::with_capacity(cfg.pretrain_subjects * cfg.relations);
    for s in 0..cfg.pretrain_subjects {
        for (r, (relation, _)) in RELATIONS.iter().enumerate().take(cfg.relations) {
            let answer = (rng.gen_range(0..w), rng.gen_range(0..w));
            let subject = format!("p{s}");
            let f = fact(pretrain.len() as u64, &subject, r, answer);
            let twin = QAPair::new(f.id + 1, format!("{subject} has which {relation} ?"), f.answer.clone());
            pretrain.push(f);
            pretrain.push(twin);
        }
    }
    Ok(SyntheticTask {
        facts,
        train,
        train_facts,
        test,
        test_facts,
        pretrain,
    })
}
