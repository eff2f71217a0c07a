use super::{infer, PipelineConfig, Searcher};
use crate::data::{QAPair, Vocab};
use crate::error::Result;
use crate::metrics::{evaluate_em_f1, EmF1};
use crate::model::Model;

/// Answer text for one question. Without a searcher, or with `k = 0`, the
/// model answers from its parameters alone.
pub fn answer_question(
    model: &Model,
    vocab: &Vocab,
    question: &str,
    searcher: Option<Searcher<'_>>,
    cfg: &PipelineConfig,
) -> Result<String> {
    let input = vocab.encode_with_eos(question);
    let ids = match searcher {
        Some(s) if cfg.k > 0 => infer(model, &input, s, cfg)?.0.output,
        _ => {
            let max_len = cfg.max_answer_len.unwrap_or(model.config().max_target_len);
            model.greedy_decode(&input, &[], max_len)?
        }
    };
    Ok(vocab.decode(&ids))
}

/// EM/F1 of greedy answers against the pairs' answers. Runs sequentially
/// (no search overlap) since only the outputs matter.
pub fn evaluate_pairs(
    model: &Model,
    vocab: &Vocab,
    searcher: Option<Searcher<'_>>,
    pairs: &[QAPair],
    cfg: &PipelineConfig,
) -> Result<EmF1> {
    let cfg = PipelineConfig {
        overlap: false,
        simulated_search_delay: None,
        ..cfg.clone()
    };
    let preds = pairs
        .iter()
        .map(|p| answer_question(model, vocab, &p.question, searcher, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&str> = pairs.iter().map(|p| p.answer.as_str()).collect();
    evaluate_em_f1(&preds, &refs)
}
