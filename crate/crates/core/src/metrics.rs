//! Exact match and token F1 over normalized answers.

use std::collections::HashMap;

use crate::data::normalize_answer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmF1 {
    pub em: f64,
    pub f1: f64,
}

pub fn exact_match(prediction: &str, reference: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(reference)
}

/// Bag-of-tokens F1 after normalization. Two empty answers score 1.
pub fn token_f1(prediction: &str, reference: &str) -> f64 {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(reference);
    let pred: Vec<&str> = pred.split_whitespace().collect();
    let gold: Vec<&str> = gold.split_whitespace().collect();
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &gold {
        *counts.entry(w).or_default() += 1;
    }
    let mut common = 0usize;
    for w in &pred {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Mean EM and F1. Empty or mismatched inputs are rejected.
pub fn evaluate_em_f1<P: AsRef<str>, R: AsRef<str>>(predictions: &[P], references: &[R]) -> Result<EmF1> {
    if predictions.len() != references.len() {
        return Err(Error::input(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::input("no predictions to evaluate"));
    }
    let n = predictions.len() as f64;
    let (mut em, mut f1) = (0.0, 0.0);
    for (p, r) in predictions.iter().zip(references) {
        if exact_match(p.as_ref(), r.as_ref()) {
            em += 1.0;
        }
        f1 += token_f1(p.as_ref(), r.as_ref());
    }
    Ok(EmF1 { em: em / n, f1: f1 / n })
}
