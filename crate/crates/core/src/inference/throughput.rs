use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{infer, PipelineConfig, Searcher, TimingReport};
use crate::error::{Error, Result};
use crate::model::Model;

const WARMUP_QUERIES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub queries: usize,
    /// Queries per second of every repetition, in run order.
    pub runs_qps: Vec<f64>,
    pub median_qps: f64,
    /// Per-query stage means over the median repetition.
    pub mean_timing: TimingReport,
}

impl ThroughputReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("throughput report serializes")
    }
}

fn mean_timing(reports: &[TimingReport]) -> TimingReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&TimingReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut out = TimingReport {
        encode_to_key_us: avg(|r| r.encode_to_key_us),
        search_us: avg(|r| r.search_us),
        overlap_layers_us: avg(|r| r.overlap_layers_us),
        search_wait_us: avg(|r| r.search_wait_us),
        post_layers_us: avg(|r| r.post_layers_us),
        decode_us: avg(|r| r.decode_us),
        total_us: avg(|r| r.total_us),
        overlapped: reports[0].overlapped,
        ..TimingReport::default()
    };
    out.finish();
    out
}

/// Runs every input `reps` times (at least 3) after a short warm-up and
/// reports the median queries per second.
pub fn bench_throughput(
    model: &Model,
    inputs: &[Vec<usize>],
    searcher: Searcher<'_>,
    cfg: &PipelineConfig,
    reps: usize,
) -> Result<ThroughputReport> {
    if inputs.is_empty() {
        return Err(Error::input("no queries to benchmark"));
    }
    for input in inputs.iter().take(WARMUP_QUERIES) {
        infer(model, input, searcher, cfg)?;
    }
    let mut runs = Vec::new();
    for _ in 0..reps.max(3) {
        let start = Instant::now();
        let timings = inputs
            .iter()
            .map(|input| infer(model, input, searcher, cfg).map(|(_, t)| t))
            .collect::<Result<Vec<_>>>()?;
        let secs = start.elapsed().as_secs_f64();
        runs.push((inputs.len() as f64 / secs, timings));
    }
    let runs_qps: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs_qps[a].total_cmp(&runs_qps[b]));
    let median = order[order.len() / 2];
    Ok(ThroughputReport {
        queries: inputs.len(),
        median_qps: runs_qps[median],
        mean_timing: mean_timing(&runs[median].1),
        runs_qps,
    })
}
