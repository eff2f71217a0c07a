use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::labels::{sample_positive, select_positives, WeakLabels};
use super::losses::{loss_gen_var, loss_kae_var, loss_ret_var, loss_vae_var, QuestionIds};
use super::optim::Optimizer;
use super::TrainConfig;
use crate::data::{QAPair, TrainingExample, Vocab};
use crate::error::{Error, Result};
use crate::memory::{
    exact_search, refresh_memory, snapshot_for_epoch, Hit, KeyValueMemory, MemorySnapshot, RetrievalResult,
};
use crate::model::{Model, RetrievedVars};
use crate::numerics::{Gradients, Tape, Var};

/// Mean loss components of one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub kae: f64,
    pub vae: f64,
    pub gen: f64,
    pub ret: f64,
    pub weighted_total: f64,
}

/// Loss weights in component order (kae, vae, gen, ret).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub kae: f64,
    pub vae: f64,
    pub gen: f64,
    pub ret: f64,
}

impl LossWeights {
    pub fn pretrain(cfg: &TrainConfig) -> Self {
        LossWeights {
            kae: cfg.w_ae,
            vae: cfg.w_ae,
            gen: cfg.w_gen,
            ret: 0.0,
        }
    }

    pub fn finetune(cfg: &TrainConfig) -> Self {
        LossWeights {
            kae: 0.0,
            vae: 0.0,
            gen: cfg.w_gen_ft,
            ret: cfg.w_ret,
        }
    }
}

impl LossReport {
    pub fn new(kae: f64, vae: f64, gen: f64, ret: f64, w: LossWeights) -> Self {
        LossReport {
            kae,
            vae,
            gen,
            ret,
            weighted_total: w.kae * kae + w.vae * vae + w.gen * gen + w.ret * ret,
        }
    }

    /// Component-wise mean of several reports, re-weighted with `w`.
    pub fn mean(reports: &[LossReport], w: LossWeights) -> Self {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossReport::new(sum(|r| r.kae), sum(|r| r.vae), sum(|r| r.gen), sum(|r| r.ret), w)
    }
}

/// Neighbors of one pre-training example.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainPlan {
    pub example: u64,
    /// Best first.
    pub neighbors: Vec<Hit>,
    pub retain_self: bool,
}

/// Retrieves each example's neighbors from `memory`, using the example's own
/// stored key as the query and excluding the example itself. A seeded subset
/// of `round(fraction · n)` examples swaps its weakest neighbor for itself.
pub fn plan_pretrain(
    memory: &KeyValueMemory,
    examples: &[u64],
    neighbors: usize,
    retain_fraction: f64,
    seed: u64,
) -> Result<Vec<PretrainPlan>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let retained = (retain_fraction * examples.len() as f64).round() as usize;
    let mut retain = vec![false; examples.len()];
    for &i in &order[..retained.min(examples.len())] {
        retain[i] = true;
    }

    examples
        .iter()
        .zip(retain)
        .map(|(&id, retain_self)| {
            let entry = memory
                .get(id)
                .ok_or_else(|| Error::input(format!("pre-training example {id} is not in the memory")))?;
            let found = exact_search(memory, &entry.key_flat, neighbors + 1)?;
            let mut hits: Vec<Hit> = found.hits.into_iter().filter(|h| h.id != id).take(neighbors).collect();
            if retain_self {
                if hits.len() == neighbors {
                    hits.pop();
                }
                let own = crate::numerics::dot_unchecked(&entry.key_flat, &entry.key_flat);
                hits.push(Hit { id, score: own });
                hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
            }
            Ok(PretrainPlan {
                example: id,
                neighbors: hits,
                retain_self,
            })
        })
        .collect()
}

/// Candidate pools retrieved once from an epoch snapshot.
#[derive(Clone, Debug)]
pub struct FinetuneCache {
    snapshot: MemorySnapshot,
    pools: Vec<RetrievalResult>,
}

impl FinetuneCache {
    /// Queries every example with the current model against `snapshot`.
    pub fn build(model: &Model, snapshot: MemorySnapshot, dataset: &[TrainingExample], pool: usize) -> Result<Self> {
        let pools = dataset
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let (q, _) = model.encode_query(&ex.input)?;
                Ok(snapshot.search(&q.flat, pool)?.with_query_id(i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FinetuneCache { snapshot, pools })
    }

    pub fn snapshot(&self) -> &MemorySnapshot {
        &self.snapshot
    }

    pub fn candidates(&self, example: usize) -> &RetrievalResult {
        &self.pools[example]
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }
}

/// Places memory entries on the tape as constants, in hit order.
fn constant_entries(t: &mut Tape, memory: &KeyValueMemory, hits: &[Hit]) -> Result<Vec<RetrievedVars>> {
    hits.iter()
        .map(|h| {
            let e = memory
                .get(h.id)
                .ok_or_else(|| Error::state(format!("entry {} missing from the memory", h.id)))?;
            Ok(RetrievedVars {
                key: t.leaf(e.key_block.clone()),
                value: t.leaf(e.value_block.clone()),
                score: h.score,
            })
        })
        .collect()
}

/// Per-example pre-training objective on a tape.
pub fn pretrain_loss_var(
    model: &Model,
    t: &mut Tape,
    pair: &(Vec<usize>, Vec<usize>),
    neighbors: &[Hit],
    memory: &KeyValueMemory,
    w: LossWeights,
) -> Result<(Var, LossReport)> {
    let (question, answer) = pair;
    let key = model.key_block_var(t, question)?;
    let kae = loss_kae_var(model, t, key, question)?;
    let value = model.value_block_var(t, answer)?;
    let vae = loss_vae_var(model, t, value, answer)?;
    let k = neighbors.len().min(model.config().top_k);
    let retrieved = constant_entries(t, memory, &neighbors[..k])?;
    let (gen, _) = loss_gen_var(model, t, question, answer, &retrieved)?;
    let total = t.weighted_sum(&[(w.kae, kae), (w.vae, vae), (w.gen, gen)]);
    let report = LossReport::new(t.scalar(kae), t.scalar(vae), t.scalar(gen), 0.0, w);
    Ok((total, report))
}

/// Everything drawn before the fine-tuning loss of one example is recorded.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetunePlan {
    /// Score-ordered pairs fed to the generator.
    pub retrieved: Vec<Hit>,
    pub labels: WeakLabels,
}

impl FinetunePlan {
    pub fn new(
        pool: &RetrievalResult,
        k: usize,
        memory: &KeyValueMemory,
        target: &str,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        Ok(FinetunePlan {
            retrieved: pool.hits[..k.min(pool.len())].to_vec(),
            labels: select_positives(pool, memory, target, cfg.task_type, cfg.m_negatives)?,
        })
    }

    /// True when the retrieval loss applies.
    pub fn trains_retriever(&self) -> bool {
        !self.labels.positives.is_empty() && !self.labels.negatives.is_empty()
    }
}

/// Per-example fine-tuning objective. `choose_positive` receives the live
/// query vector and returns the sampled positive; it is only called when
/// the plan trains the retriever.
#[allow(clippy::too_many_arguments)]
pub fn finetune_loss_var(
    model: &Model,
    t: &mut Tape,
    example: &TrainingExample,
    plan: &FinetunePlan,
    memory: &KeyValueMemory,
    questions: &QuestionIds,
    w: LossWeights,
    choose_positive: &mut dyn FnMut(&[f64]) -> Result<u64>,
) -> Result<(Var, LossReport)> {
    let retrieved = constant_entries(t, memory, &plan.retrieved)?;
    let (gen, fwd) = loss_gen_var(model, t, &example.input, &example.target, &retrieved)?;
    if !plan.trains_retriever() || w.ret == 0.0 {
        let total = t.scale(gen, w.gen);
        return Ok((total, LossReport::new(0.0, 0.0, t.scalar(gen), 0.0, w)));
    }
    let q = t.value(fwd.query_flat).data().to_vec();
    let positive = choose_positive(&q)?;
    let ret = loss_ret_var(model, t, fwd.query_flat, positive, &plan.labels.negatives, questions)?;
    let total = t.weighted_sum(&[(w.gen, gen), (w.ret, ret)]);
    Ok((total, LossReport::new(0.0, 0.0, t.scalar(gen), t.scalar(ret), w)))
}

/// Optimizer, RNG and configuration shared across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    epochs_run: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            epochs_run: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.optimizer.steps()
    }

    fn apply(&mut self, model: &mut Model, mut grads: Gradients, batch: usize) {
        grads.scale(1.0 / batch as f64);
        if let Some(clip) = self.config.clip_norm {
            let norm = grads.global_norm();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        self.optimizer.step(model.params_mut(), &grads);
    }

    fn batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// One pass over `corpus`: KAE + VAE + generation with retrieved
    /// neighbors, then the memory is re-encoded with the updated weights.
    pub fn pretrain_epoch(
        &mut self,
        model: &mut Model,
        vocab: &Vocab,
        memory: &mut KeyValueMemory,
        corpus: &[QAPair],
    ) -> Result<Vec<LossReport>> {
        if corpus.is_empty() {
            return Err(Error::input("empty pre-training corpus"));
        }
        let w = LossWeights::pretrain(&self.config);
        let ids: Vec<u64> = corpus.iter().map(|p| p.id).collect();
        let plan_seed = self.config.seed ^ self.epochs_run.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let plans = plan_pretrain(
            memory,
            &ids,
            self.config.neighbors,
            self.config.retain_self_fraction,
            plan_seed,
        )?;
        let tokens: Vec<(Vec<usize>, Vec<usize>)> = corpus
            .iter()
            .map(|p| (vocab.encode_with_eos(&p.question), vocab.encode_with_eos(&p.answer)))
            .collect();
        let snapshot = snapshot_for_epoch(memory);

        let mut reports = Vec::new();
        for batch in self.batches(corpus.len()) {
            let mut grads = Gradients::zeros_like(model.params());
            let mut parts = Vec::with_capacity(batch.len());
            for &i in &batch {
                let mut t = Tape::new(model.params());
                let (loss, report) =
                    pretrain_loss_var(model, &mut t, &tokens[i], &plans[i].neighbors, snapshot.memory(), w).map_err(
                        |e| Error::Entry {
                            id: ids[i],
                            source: Box::new(e),
                        },
                    )?;
                grads.accumulate(&t.backward(loss));
                parts.push(report);
            }
            self.apply(model, grads, batch.len());
            reports.push(LossReport::mean(&parts, w));
        }
        *memory = refresh_memory(memory, model, vocab)?;
        self.epochs_run += 1;
        Ok(reports)
    }

    /// One pass over `dataset` against a snapshot of `memory` taken now.
    /// Candidate pools are cached for the whole epoch; the memory is
    /// refreshed at the end.
    pub fn finetune_epoch(
        &mut self,
        model: &mut Model,
        vocab: &Vocab,
        memory: &mut KeyValueMemory,
        dataset: &mut [TrainingExample],
    ) -> Result<Vec<LossReport>> {
        if dataset.is_empty() {
            return Err(Error::input("empty fine-tuning dataset"));
        }
        let w = LossWeights::finetune(&self.config);
        let k = self.config.retrieved_k.unwrap_or(model.config().top_k);
        let cache = FinetuneCache::build(model, snapshot_for_epoch(memory), dataset, self.config.cache_pool_size)?;
        let frozen = cache.snapshot().memory();
        let questions = QuestionIds::new(frozen, vocab);
        let plans = dataset
            .iter()
            .enumerate()
            .map(|(i, ex)| FinetunePlan::new(cache.candidates(i), k, frozen, &ex.target_text, &self.config))
            .collect::<Result<Vec<_>>>()?;
        for (i, ex) in dataset.iter_mut().enumerate() {
            ex.cached_retrieval = Some(cache.candidates(i).ids());
        }

        let mut reports = Vec::new();
        for batch in self.batches(dataset.len()) {
            let mut grads = Gradients::zeros_like(model.params());
            let mut parts = Vec::with_capacity(batch.len());
            for &i in &batch {
                let mut t = Tape::new(model.params());
                let rng = &mut self.rng;
                let labels = &plans[i].labels;
                let mut choose = |q: &[f64]| sample_positive(labels, q, frozen, rng);
                let (loss, report) = finetune_loss_var(
                    model,
                    &mut t,
                    &dataset[i],
                    &plans[i],
                    frozen,
                    &questions,
                    w,
                    &mut choose,
                )?;
                grads.accumulate(&t.backward(loss));
                parts.push(report);
            }
            self.apply(model, grads, batch.len());
            reports.push(LossReport::mean(&parts, w));
        }
        *memory = refresh_memory(memory, model, vocab)?;
        self.epochs_run += 1;
        Ok(reports)
    }
}

/// Fraction of examples whose top-1 exact-search hit is a positive.
pub fn retrieval_hit_at_1(
    model: &Model,
    memory: &KeyValueMemory,
    dataset: &[TrainingExample],
    task: super::TaskType,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    let mut hits = 0usize;
    for ex in dataset {
        let (q, _) = model.encode_query(&ex.input)?;
        let top = exact_search(memory, &q.flat, 1)?;
        let entry = memory.get(top.hits[0].id).expect("search returns stored ids");
        if super::labels::answer_matches(&entry.answer, &ex.target_text, task) {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}
