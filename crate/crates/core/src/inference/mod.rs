//! Query-time pipeline.
//!
//! The encoder runs to the key layer, the query is handed to a search worker,
//! and the layers up to the concat layer run while the search is in flight.
//! The main path blocks only where the retrieved keys are joined in.

mod eval;
mod throughput;

use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use eval::{answer_question, evaluate_pairs};
pub use throughput::{bench_throughput, ThroughputReport};

use crate::error::{Error, Result};
use crate::memory::{exact_search, HnswIndex, KeyValueMemory, RetrievalResult};
use crate::model::{LayerTaps, Model, RetrievedVars};
use crate::numerics::Tape;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    /// Use the taps the model was configured with.
    #[default]
    Model,
    Fksv,
    Sksv,
    Custom {
        key: usize,
        concat: usize,
        value: usize,
    },
}

impl PipelineMode {
    pub fn taps(self, model: &Model) -> LayerTaps {
        match self {
            PipelineMode::Model => model.config().taps(),
            PipelineMode::Fksv => LayerTaps::FKSV,
            PipelineMode::Sksv => LayerTaps::SKSV,
            PipelineMode::Custom { key, concat, value } => LayerTaps { key, concat, value },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    #[default]
    Exact,
    Hnsw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub index: IndexKind,
    pub ef_search: usize,
    /// Retrieved pairs integrated into the encoder.
    pub k: usize,
    /// Search latency to simulate, counted from the start of the search.
    pub simulated_search_delay: Option<Duration>,
    /// Run the search concurrently with the layers before the concat layer.
    pub overlap: bool,
    /// Decoding limit; `None` uses the model's target length.
    pub max_answer_len: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: PipelineMode::Model,
            index: IndexKind::Exact,
            ef_search: 64,
            k: 4,
            simulated_search_delay: None,
            overlap: true,
            max_answer_len: None,
        }
    }
}

/// Where retrieval happens. The memory supplies the blocks in both cases.
#[derive(Clone, Copy, Debug)]
pub struct Searcher<'a> {
    pub memory: &'a KeyValueMemory,
    pub index: Option<&'a HnswIndex>,
}

impl<'a> Searcher<'a> {
    pub fn exact(memory: &'a KeyValueMemory) -> Self {
        Searcher { memory, index: None }
    }

    pub fn with_index(memory: &'a KeyValueMemory, index: &'a HnswIndex) -> Self {
        Searcher {
            memory,
            index: Some(index),
        }
    }

    fn check(&self, model: &Model, cfg: &PipelineConfig) -> Result<()> {
        if self.memory.hidden() != model.hidden() || self.memory.prefix_len() != model.prefix_len() {
            return Err(Error::state(format!(
                "memory blocks are {}x{}, model expects {}x{}",
                self.memory.prefix_len(),
                self.memory.hidden(),
                model.prefix_len(),
                model.hidden()
            )));
        }
        if cfg.index == IndexKind::Hnsw {
            match self.index {
                None => return Err(Error::state("no graph index was supplied")),
                Some(ix) if ix.len() != self.memory.len() => {
                    return Err(Error::state("graph index and memory hold different entries"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// The simulated delay runs from `started`, so a worker that is
    /// scheduled late still finishes no later than the deadline.
    fn search(&self, q: &[f64], cfg: &PipelineConfig, started: Instant) -> Result<RetrievalResult> {
        if let Some(d) = cfg.simulated_search_delay {
            let left = (started + d).saturating_duration_since(Instant::now());
            if !left.is_zero() {
                thread::sleep(left);
            }
        }
        match (cfg.index, self.index) {
            (IndexKind::Hnsw, Some(ix)) => ix.search(q, cfg.k, cfg.ef_search.max(cfg.k)),
            (IndexKind::Hnsw, None) => Err(Error::state("no graph index was supplied")),
            (IndexKind::Exact, _) => exact_search(self.memory, q, cfg.k),
        }
    }
}

/// Stage durations of one query, in microseconds. Offsets are measured from
/// the start of the query.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Embedding, layers up to the key layer, and the query head.
    pub encode_to_key_us: f64,
    pub search_us: f64,
    /// Layers after the key layer up to the concat layer.
    pub overlap_layers_us: f64,
    /// Time the main path spent blocked on the search.
    pub search_wait_us: f64,
    /// Key/value integration and the remaining encoder layers.
    pub post_layers_us: f64,
    pub decode_us: f64,
    pub total_us: f64,
    /// encode + max(search, overlap layers) + post + decode when overlapped,
    /// the plain sum otherwise.
    pub modeled_total_us: f64,
    pub overlap_savings_us: f64,
    pub queries_per_second: f64,
    pub overlapped: bool,
    pub search_start_us: f64,
    pub search_end_us: f64,
    pub layers_start_us: f64,
    pub layers_end_us: f64,
}

impl TimingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("timing report serializes")
    }

    /// True when the search window and the overlap-layer window intersect.
    pub fn interleaved(&self) -> bool {
        self.search_start_us < self.layers_end_us && self.layers_start_us < self.search_end_us
    }

    fn finish(&mut self) {
        let serial = self.encode_to_key_us + self.post_layers_us + self.decode_us;
        let window = self.search_us + self.overlap_layers_us;
        let hidden = if self.overlapped {
            window - self.search_us.max(self.overlap_layers_us)
        } else {
            0.0
        };
        self.modeled_total_us = serial + window - hidden;
        self.overlap_savings_us = hidden;
        self.queries_per_second = if self.total_us > 0.0 { 1e6 / self.total_us } else { 0.0 };
    }
}

/// Output of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub output: Vec<usize>,
    pub retrieved: RetrievalResult,
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// Answers one tokenized input (without prefix).
pub fn infer(
    model: &Model,
    input: &[usize],
    searcher: Searcher<'_>,
    cfg: &PipelineConfig,
) -> Result<(Inference, TimingReport)> {
    if cfg.k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if cfg.k > model.config().top_k {
        return Err(Error::input(format!(
            "k = {} exceeds the model's {} rank slots",
            cfg.k,
            model.config().top_k
        )));
    }
    searcher.check(model, cfg)?;
    let taps = cfg.mode.taps(model);
    taps.validate(model.config().encoder_layers)?;
    let ids = model.prefixed(input)?;
    let max_len = cfg.max_answer_len.unwrap_or(model.config().max_target_len);
    if max_len == 0 {
        return Err(Error::input("max_answer_len must be at least 1"));
    }

    let mut report = TimingReport {
        overlapped: cfg.overlap,
        ..TimingReport::default()
    };
    let start = Instant::now();
    let since = |t: Instant| micros(t.duration_since(start));
    let mut t = Tape::new(model.params());
    let x = model.embed_var(&mut t, &ids);
    let h_key = model.encoder_layers_var(&mut t, x, 0..taps.key);
    let q_block = model.key_head_var(&mut t, h_key);
    let q_flat = t.value(q_block).mean_rows();
    let key_done = Instant::now();
    report.encode_to_key_us = since(key_done);

    let timed_search = |q: &[f64], started: &dyn Fn()| {
        let s = Instant::now();
        started();
        let r = searcher.search(q, cfg, s);
        (r, s, Instant::now())
    };
    let (found, s0, s1, l0, l1, joined);
    if cfg.overlap {
        // The layers wait until the search has started so the two windows
        // interleave even on a single core.
        let (tx, rx) = mpsc::channel();
        let (res, a, b, c, d, e) = thread::scope(|scope| {
            let worker = scope.spawn(move || {
                timed_search(&q_flat, &|| {
                    let _ = tx.send(());
                })
            });
            let _ = rx.recv();
            let l0 = Instant::now();
            let h = model.encoder_layers_var(&mut t, h_key, taps.key..taps.concat);
            let l1 = Instant::now();
            let (res, s0, s1) = worker.join().expect("search worker panicked");
            (res.map(|r| (r, h)), s0, s1, l0, l1, Instant::now())
        });
        (found, s0, s1, l0, l1, joined) = (res, a, b, c, d, e);
    } else {
        let (res, a, b) = timed_search(&q_flat, &|| {});
        let res = res?;
        let c = Instant::now();
        let h = model.encoder_layers_var(&mut t, h_key, taps.key..taps.concat);
        let d = Instant::now();
        (found, s0, s1, l0, l1, joined) = (Ok((res, h)), a, b, c, d, d);
    }
    let (retrieved, h_concat) = found?;
    report.search_us = micros(s1 - s0);
    report.overlap_layers_us = micros(l1 - l0);
    report.search_wait_us = if cfg.overlap {
        micros(joined.saturating_duration_since(l1))
    } else {
        report.search_us
    };
    report.search_start_us = since(s0);
    report.search_end_us = since(s1);
    report.layers_start_us = since(l0);
    report.layers_end_us = since(l1);

    let post_start = Instant::now();
    let entries = retrieved
        .hits
        .iter()
        .map(|h| {
            let e = searcher
                .memory
                .get(h.id)
                .ok_or_else(|| Error::state(format!("index returned unknown id {}", h.id)))?;
            Ok(RetrievedVars {
                key: t.leaf(e.key_block.clone()),
                value: t.leaf(e.value_block.clone()),
                score: h.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let keys: Vec<_> = entries.iter().map(|r| r.key).collect();
    let scores: Vec<f64> = entries.iter().map(|r| r.score).collect();
    let joined_h = model.integrate_keys_var(&mut t, h_concat, &keys, &scores)?;
    let h_value = model.encoder_layers_var(&mut t, joined_h, taps.concat..taps.value);
    let values: Vec<_> = entries.iter().map(|r| r.value).collect();
    let added = model.integrate_values_var(&mut t, h_value, &values)?;
    let enc_out = model.encoder_layers_var(&mut t, added, taps.value..model.config().encoder_layers);
    let decode_start = Instant::now();
    report.post_layers_us = micros(decode_start - post_start);
    let output = model.greedy_decode_var(&mut t, enc_out, max_len);
    let end = Instant::now();
    report.decode_us = micros(end - decode_start);
    report.total_us = since(end);
    report.finish();
    Ok((Inference { output, retrieved }, report))
}
