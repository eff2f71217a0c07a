use std::collections::HashMap;

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::memory::KeyValueMemory;
use crate::model::{ForwardVars, Model, RetrievedVars};
use crate::numerics::{Tape, Var};

/// Token ids of every stored question, keyed by entry id. Used to recompute
/// keys live inside the retrieval loss.
#[derive(Clone, Debug, Default)]
pub struct QuestionIds {
    ids: HashMap<u64, Vec<usize>>,
}

impl QuestionIds {
    pub fn new(memory: &KeyValueMemory, vocab: &Vocab) -> Self {
        QuestionIds {
            ids: memory
                .entries()
                .iter()
                .map(|e| (e.id, vocab.encode_with_eos(&e.question)))
                .collect(),
        }
    }

    pub fn get(&self, id: u64) -> Result<&[usize]> {
        self.ids
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::input(format!("no question for entry {id}")))
    }
}

fn check_block(model: &Model, t: &Tape, block: Var) -> Result<()> {
    let want = (model.prefix_len(), model.hidden());
    let got = t.value(block).shape();
    if got != want {
        return Err(Error::input(format!("block has shape {got:?}, expected {want:?}")));
    }
    Ok(())
}

fn reconstruction_var(model: &Model, t: &mut Tape, block: Var, target: &[usize]) -> Result<Var> {
    check_block(model, t, block)?;
    let dec_in = model.teacher_input(target)?;
    let logits = model.decoder_logits_var(t, block, &dec_in);
    Ok(t.cross_entropy(logits, target))
}

/// Question reconstruction from the `P` rows of its key block alone.
/// `question` is the teacher-forced target and should end with EOS.
pub fn loss_kae_var(model: &Model, t: &mut Tape, key_block: Var, question: &[usize]) -> Result<Var> {
    reconstruction_var(model, t, key_block, question)
}

/// Answer reconstruction from the `P` rows of its value block alone.
pub fn loss_vae_var(model: &Model, t: &mut Tape, value_block: Var, answer: &[usize]) -> Result<Var> {
    reconstruction_var(model, t, value_block, answer)
}

/// Answer likelihood given the input and the retrieved pairs (score order).
/// Also returns the forward outputs so the caller can reuse the query.
pub fn loss_gen_var(
    model: &Model,
    t: &mut Tape,
    input: &[usize],
    target: &[usize],
    retrieved: &[RetrievedVars],
) -> Result<(Var, ForwardVars)> {
    let fwd = model.forward_var(t, input, target, retrieved)?;
    let loss = t.cross_entropy(fwd.logits, target);
    Ok((loss, fwd))
}

/// Softmax cross-entropy of the positive against the negatives, where each
/// similarity is `⟨q, k⟩` with `q` and the keys as `1 × h` rows.
pub fn retrieval_nll_var(t: &mut Tape, q_flat: Var, positive: Var, negatives: &[Var]) -> Result<Var> {
    if negatives.is_empty() {
        return Err(Error::contract("retrieval loss needs at least one negative"));
    }
    let mut keys = Vec::with_capacity(negatives.len() + 1);
    keys.push(positive);
    keys.extend_from_slice(negatives);
    let stacked = t.concat_rows(&keys);
    let scores = t.matmul_t(q_flat, stacked);
    Ok(t.cross_entropy(scores, &[0]))
}

/// Retrieval loss with live keys: the positive's and negatives' keys are
/// re-encoded from their question text on this tape.
pub fn loss_ret_var(
    model: &Model,
    t: &mut Tape,
    q_flat: Var,
    positive: u64,
    negatives: &[u64],
    questions: &QuestionIds,
) -> Result<Var> {
    if negatives.contains(&positive) {
        return Err(Error::contract(format!(
            "entry {positive} is both positive and negative"
        )));
    }
    let mut live_key = |id: u64| -> Result<Var> {
        let block = model.key_block_var(t, questions.get(id)?)?;
        Ok(t.mean_rows(block))
    };
    let pos = live_key(positive)?;
    let negs = negatives.iter().map(|&id| live_key(id)).collect::<Result<Vec<_>>>()?;
    retrieval_nll_var(t, q_flat, pos, &negs)
}

/// `-log(exp(s⁺) / (exp(s⁺) + Σ exp(s⁻)))` from raw similarities.
pub fn loss_ret(positive_sim: f64, negative_sims: &[f64]) -> Result<f64> {
    if negative_sims.is_empty() {
        return Err(Error::contract("retrieval loss needs at least one negative"));
    }
    let max = negative_sims.iter().copied().fold(positive_sim, f64::max);
    let z: f64 = std::iter::once(positive_sim)
        .chain(negative_sims.iter().copied())
        .map(|s| (s - max).exp())
        .sum();
    Ok(max + z.ln() - positive_sim)
}
