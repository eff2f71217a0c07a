//! The memory-augmented encoder-decoder.
//!
//! Inputs are prefixed with `P` reserved prefix tokens. The encoder output at
//! the key layer feeds a width-3 convolution whose first `P` rows form the key
//! (or query) block. Retrieved key blocks are prepended to the hidden states
//! after the concat layer, each slot tagged with a learned rank embedding, and
//! retrieved value blocks are added onto those same rows after the value
//! layer. The decoder cross-attends to the final encoder states.
//!
//! Every operation has a tape-level form (`*_var`) used by training and a
//! matrix-level convenience wrapper that records onto a throwaway tape.

mod checkpoint;
mod config;
mod transformer;

use std::ops::Range;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{LayerTaps, ModelConfig};

use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, ParamStore, Tape, Var};
use transformer::Layout;

/// Key representation of one question: `P × h`.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyEmbedding {
    pub block: Matrix,
}

/// Value representation of one answer: `P × h`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueEmbedding {
    pub block: Matrix,
}

/// Query block and its flattened (row-mean) vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub block: Matrix,
    pub flat: Vec<f64>,
}

impl Query {
    pub fn from_block(block: Matrix) -> Self {
        let flat = flatten(&block);
        Query { block, flat }
    }
}

/// Arithmetic mean of the rows of a prefix block.
pub fn flatten(block: &Matrix) -> Vec<f64> {
    block.mean_rows()
}

/// Inner product of the flattened query with a flattened key.
pub fn similarity(q: &Query, key_flat: &[f64]) -> Result<f64> {
    dot(&q.flat, key_flat)
}

/// One retrieved memory entry handed to the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub key: KeyEmbedding,
    pub value: ValueEmbedding,
    pub score: f64,
}

/// A retrieved entry already placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RetrievedVars {
    pub key: Var,
    pub value: Var,
    pub score: f64,
}

/// Encoder outputs of a memory-conditioned pass.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub output: Var,
    pub query_block: Var,
    pub query_flat: Var,
}

/// Outputs of a teacher-forced forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub query_block: Var,
    pub query_flat: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore,
}

impl Model {
    /// A freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, params) = Layout::init(&config, seed);
        Ok(Model { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn prefix_len(&self) -> usize {
        self.config.prefix_len
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    /// Prepends the prefix ids and validates the result against the limits.
    pub fn prefixed(&self, ids: &[usize]) -> Result<Vec<usize>> {
        if ids.is_empty() {
            return Err(Error::input("empty input sequence"));
        }
        self.check_vocab(ids)?;
        let p = self.config.prefix_len;
        if ids.len() + p > self.config.max_input_len {
            return Err(Error::input(format!(
                "input of {} tokens plus {p} prefix exceeds maximum length {}",
                ids.len(),
                self.config.max_input_len
            )));
        }
        let mut out: Vec<usize> = (0..p).map(|i| crate::data::PREFIX_BASE + i).collect();
        out.extend_from_slice(ids);
        Ok(out)
    }

    fn check_vocab(&self, ids: &[usize]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::input(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn check_taps(&self, taps: LayerTaps) -> Result<()> {
        taps.validate(self.config.encoder_layers)
    }

    fn check_block(&self, block: &Matrix, what: &str) -> Result<()> {
        let want = (self.config.prefix_len, self.config.hidden);
        if block.shape() != want {
            return Err(Error::input(format!(
                "{what} block has shape {:?}, expected {want:?}",
                block.shape()
            )));
        }
        Ok(())
    }

    /// Token plus position embeddings of an already prefixed sequence.
    pub fn embed_var(&self, t: &mut Tape, prefixed: &[usize]) -> Var {
        let table = t.param(self.layout.tok_emb);
        let tok = t.gather(table, prefixed);
        let pos_table = t.param(self.layout.enc_pos);
        let pos = t.slice_rows(pos_table, 0, prefixed.len());
        t.add(tok, pos)
    }

    /// Runs encoder layers by 0-based index; `0..l` yields the output of layer `l`.
    pub fn encoder_layers_var(&self, t: &mut Tape, mut x: Var, layers: Range<usize>) -> Var {
        for i in layers {
            x = transformer::encoder_layer(t, &self.layout.encoder[i], self.config.heads, x);
        }
        x
    }

    /// Width-3, same-padded convolution over the sequence axis, first `P` rows.
    pub fn key_head_var(&self, t: &mut Tape, hidden: Var) -> Var {
        let p = self.config.prefix_len;
        let n = t.value(hidden).rows();
        // Rows beyond P do not influence the first P outputs.
        let window = if n > p + 1 {
            t.slice_rows(hidden, 0, p + 1)
        } else {
            hidden
        };
        let conv = self.layout.key_conv;
        let prev = t.shift_rows(window, -1);
        let next = t.shift_rows(window, 1);
        let (w0, w1, w2, b) = (
            t.param(conv.w[0]),
            t.param(conv.w[1]),
            t.param(conv.w[2]),
            t.param(conv.b),
        );
        let a = t.matmul(prev, w0);
        let c = t.matmul(window, w1);
        let d = t.matmul(next, w2);
        let s = t.add(a, c);
        let s = t.add(s, d);
        let s = t.add_row(s, b);
        t.slice_rows(s, 0, p)
    }

    /// Key block of a question (token ids without prefix).
    pub fn key_block_var(&self, t: &mut Tape, question: &[usize]) -> Result<Var> {
        self.key_block_with_taps(t, question, self.config.taps())
    }

    pub fn key_block_with_taps(&self, t: &mut Tape, question: &[usize], taps: LayerTaps) -> Result<Var> {
        self.check_taps(taps)?;
        let ids = self.prefixed(question)?;
        let x = self.embed_var(t, &ids);
        let h = self.encoder_layers_var(t, x, 0..taps.key);
        Ok(self.key_head_var(t, h))
    }

    /// Value block of an answer: raw prefix hidden states at the value layer.
    pub fn value_block_var(&self, t: &mut Tape, answer: &[usize]) -> Result<Var> {
        self.value_block_with_taps(t, answer, self.config.taps())
    }

    pub fn value_block_with_taps(&self, t: &mut Tape, answer: &[usize], taps: LayerTaps) -> Result<Var> {
        self.check_taps(taps)?;
        let ids = self.prefixed(answer)?;
        let x = self.embed_var(t, &ids);
        let h = self.encoder_layers_var(t, x, 0..taps.value);
        Ok(t.slice_rows(h, 0, self.config.prefix_len))
    }

    /// Prepends score-ordered key blocks, each offset by its slot's rank
    /// embedding, to `hidden`.
    pub fn integrate_keys_var(&self, t: &mut Tape, hidden: Var, keys: &[Var], scores: &[f64]) -> Result<Var> {
        if keys.len() != scores.len() {
            return Err(Error::contract(format!(
                "{} keys but {} scores",
                keys.len(),
                scores.len()
            )));
        }
        if keys.len() > self.config.top_k {
            return Err(Error::contract(format!(
                "{} keys exceed the {} rank slots",
                keys.len(),
                self.config.top_k
            )));
        }
        if !scores.windows(2).all(|w| w[0] >= w[1]) {
            return Err(Error::contract("retrieved keys are not sorted by descending score"));
        }
        if keys.is_empty() {
            return Ok(hidden);
        }
        let ranks = t.param(self.layout.rank_emb);
        let mut parts = Vec::with_capacity(keys.len() + 1);
        for (slot, &key) in keys.iter().enumerate() {
            self.check_block(t.value(key), "key")?;
            let rank = t.slice_rows(ranks, slot, 1);
            parts.push(t.add_row(key, rank));
        }
        parts.push(hidden);
        Ok(t.concat_rows(&parts))
    }

    /// Adds value block `s` onto rows `[s·P, (s+1)·P)`; later rows are untouched.
    pub fn integrate_values_var(&self, t: &mut Tape, hidden: Var, values: &[Var]) -> Result<Var> {
        if values.is_empty() {
            return Ok(hidden);
        }
        let p = self.config.prefix_len;
        let slots = values.len() * p;
        let (rows, cols) = t.value(hidden).shape();
        if rows < slots {
            return Err(Error::contract(format!(
                "{} value slots but only {rows} hidden rows",
                values.len()
            )));
        }
        for &v in values {
            self.check_block(t.value(v), "value")?;
        }
        let mut parts = values.to_vec();
        if rows > slots {
            parts.push(t.leaf(Matrix::zeros(rows - slots, cols)));
        }
        let delta = t.concat_rows(&parts);
        Ok(t.add(hidden, delta))
    }

    /// Encoder pass with retrieved pairs integrated at the configured taps.
    pub fn encode_with_memory_var(
        &self,
        t: &mut Tape,
        input: &[usize],
        retrieved: &[RetrievedVars],
        taps: LayerTaps,
    ) -> Result<EncoderVars> {
        self.check_taps(taps)?;
        let ids = self.prefixed(input)?;
        let x = self.embed_var(t, &ids);
        let h_key = self.encoder_layers_var(t, x, 0..taps.key);
        let query_block = self.key_head_var(t, h_key);
        let query_flat = t.mean_rows(query_block);
        let h_concat = self.encoder_layers_var(t, h_key, taps.key..taps.concat);
        let keys: Vec<Var> = retrieved.iter().map(|r| r.key).collect();
        let scores: Vec<f64> = retrieved.iter().map(|r| r.score).collect();
        let joined = self.integrate_keys_var(t, h_concat, &keys, &scores)?;
        let h_value = self.encoder_layers_var(t, joined, taps.concat..taps.value);
        let values: Vec<Var> = retrieved.iter().map(|r| r.value).collect();
        let added = self.integrate_values_var(t, h_value, &values)?;
        let output = self.encoder_layers_var(t, added, taps.value..self.config.encoder_layers);
        Ok(EncoderVars {
            output,
            query_block,
            query_flat,
        })
    }

    /// Decoder logits (`T × V`) for decoder inputs attending to `memory`.
    pub fn decoder_logits_var(&self, t: &mut Tape, memory: Var, decoder_input: &[usize]) -> Var {
        let table = t.param(self.layout.tok_emb);
        let tok = t.gather(table, decoder_input);
        let pos_table = t.param(self.layout.dec_pos);
        let pos = t.slice_rows(pos_table, 0, decoder_input.len());
        let mut x = t.add(tok, pos);
        let mem = transformer::norm(t, self.layout.memory_norm, memory);
        for layer in &self.layout.decoder {
            x = transformer::decoder_layer(t, layer, self.config.heads, x, mem);
        }
        let x = transformer::norm(t, self.layout.final_norm, x);
        let (w, b) = (t.param(self.layout.out_w), t.param(self.layout.out_b));
        let logits = t.matmul(x, w);
        t.add_row(logits, b)
    }

    /// BOS followed by all but the last target token.
    pub fn teacher_input(&self, target: &[usize]) -> Result<Vec<usize>> {
        if target.is_empty() {
            return Err(Error::input("empty target sequence"));
        }
        if target.len() > self.config.max_target_len {
            return Err(Error::input(format!(
                "target of {} tokens exceeds maximum {}",
                target.len(),
                self.config.max_target_len
            )));
        }
        self.check_vocab(target)?;
        let mut input = Vec::with_capacity(target.len());
        input.push(BOS);
        input.extend_from_slice(&target[..target.len() - 1]);
        Ok(input)
    }

    /// Teacher-forced forward pass; also returns the query branch.
    pub fn forward_var(
        &self,
        t: &mut Tape,
        input: &[usize],
        target: &[usize],
        retrieved: &[RetrievedVars],
    ) -> Result<ForwardVars> {
        self.forward_with_taps(t, input, target, retrieved, self.config.taps())
    }

    pub fn forward_with_taps(
        &self,
        t: &mut Tape,
        input: &[usize],
        target: &[usize],
        retrieved: &[RetrievedVars],
        taps: LayerTaps,
    ) -> Result<ForwardVars> {
        let dec_in = self.teacher_input(target)?;
        let enc = self.encode_with_memory_var(t, input, retrieved, taps)?;
        let logits = self.decoder_logits_var(t, enc.output, &dec_in);
        Ok(ForwardVars {
            logits,
            query_block: enc.query_block,
            query_flat: enc.query_flat,
        })
    }

    /// Greedy decoding against an encoder memory already on the tape.
    /// Ties go to the lowest id; EOS is not included in the output.
    pub fn greedy_decode_var(&self, t: &mut Tape, memory: Var, max_len: usize) -> Vec<usize> {
        let max_len = max_len.min(self.config.max_target_len);
        let mut dec_in = vec![BOS];
        let mut out = Vec::new();
        for _ in 0..max_len {
            let logits = self.decoder_logits_var(t, memory, &dec_in);
            let m = t.value(logits);
            let next = argmax(m.row(m.rows() - 1));
            if next == EOS {
                break;
            }
            out.push(next);
            dec_in.push(next);
        }
        out
    }

    /// Places owned retrieved entries on a tape as constants.
    pub fn retrieved_leaves(&self, t: &mut Tape, retrieved: &[Retrieved]) -> Result<Vec<RetrievedVars>> {
        retrieved
            .iter()
            .map(|r| {
                self.check_block(&r.key.block, "key")?;
                self.check_block(&r.value.block, "value")?;
                Ok(RetrievedVars {
                    key: t.leaf(r.key.block.clone()),
                    value: t.leaf(r.value.block.clone()),
                    score: r.score,
                })
            })
            .collect()
    }

    pub fn encode_key(&self, question: &[usize]) -> Result<KeyEmbedding> {
        let mut t = Tape::new(&self.params);
        let v = self.key_block_var(&mut t, question)?;
        Ok(KeyEmbedding {
            block: t.value(v).clone(),
        })
    }

    pub fn encode_value(&self, answer: &[usize]) -> Result<ValueEmbedding> {
        let mut t = Tape::new(&self.params);
        let v = self.value_block_var(&mut t, answer)?;
        Ok(ValueEmbedding {
            block: t.value(v).clone(),
        })
    }

    /// Query plus the encoder hidden state at the key layer.
    pub fn encode_query(&self, input: &[usize]) -> Result<(Query, Matrix)> {
        let taps = self.config.taps();
        let ids = self.prefixed(input)?;
        let mut t = Tape::new(&self.params);
        let x = self.embed_var(&mut t, &ids);
        let h = self.encoder_layers_var(&mut t, x, 0..taps.key);
        let block = self.key_head_var(&mut t, h);
        Ok((Query::from_block(t.value(block).clone()), t.value(h).clone()))
    }

    /// Teacher-forced decoder logits for `target`.
    pub fn forward(&self, input: &[usize], target: &[usize], retrieved: &[Retrieved]) -> Result<Matrix> {
        let mut t = Tape::new(&self.params);
        let r = self.retrieved_leaves(&mut t, retrieved)?;
        let out = self.forward_var(&mut t, input, target, &r)?;
        Ok(t.value(out.logits).clone())
    }

    pub fn greedy_decode(&self, input: &[usize], retrieved: &[Retrieved], max_len: usize) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Err(Error::input("max_len must be at least 1"));
        }
        let mut t = Tape::new(&self.params);
        let r = self.retrieved_leaves(&mut t, retrieved)?;
        let enc = self.encode_with_memory_var(&mut t, input, &r, self.config.taps())?;
        Ok(self.greedy_decode_var(&mut t, enc.output, max_len))
    }

    /// Greedy reconstruction from a bare `P × h` block (key or value).
    pub fn decode_from_block(&self, block: &Matrix, max_len: usize) -> Result<Vec<usize>> {
        self.check_block(block, "memory")?;
        let mut t = Tape::new(&self.params);
        let mem = t.leaf(block.clone());
        Ok(self.greedy_decode_var(&mut t, mem, max_len))
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
