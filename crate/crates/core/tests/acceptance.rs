//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting.

use std::collections::HashSet;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kvmem_core::data::{QAPair, TrainingExample, Vocab};
use kvmem_core::inference::{evaluate_pairs, infer, PipelineConfig, PipelineMode, Searcher};
use kvmem_core::memory::{
    build_memory, exact_search, hnsw_build, refresh_memory, snapshot_for_epoch, Hit, HnswParams, KeyValueMemory,
    MemoryEntry,
};
use kvmem_core::model::{LayerTaps, Model, ModelConfig};
use kvmem_core::numerics::{grad_check, GradCheckReport, Gradients, Matrix, Tape};
use kvmem_core::synthetic::{synthetic_task, SyntheticConfig, SyntheticTask};
use kvmem_core::training::{
    finetune_loss_var, loss_gen_var, loss_kae_var, loss_ret_var, loss_vae_var, positive_probabilities,
    retrieval_hit_at_1, sample_positive, FinetuneCache, FinetunePlan, LossWeights, OptimizerKind, QuestionIds,
    TaskType, TrainConfig, Trainer, WeakLabels,
};

/// Criteria run one at a time so wall-clock budgets and timings are not
/// skewed by each other.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, ok: bool, detail: String) {
    println!("{} criterion {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn vocab_for(pairs: &[QAPair], prefix_len: usize) -> Vocab {
    let text: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.question.as_str(), p.answer.as_str()])
        .collect();
    Vocab::build(&text, usize::MAX, prefix_len).unwrap()
}

fn unit_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn vector_memory(vectors: &[Vec<f64>]) -> KeyValueMemory {
    let dim = vectors[0].len();
    let entries = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let block = Matrix::row_vector(v.clone());
            MemoryEntry::new(i as u64, &block, &block, format!("q{i}"), format!("a{i}"))
        })
        .collect();
    KeyValueMemory::from_entries(entries, 1, dim, 0).unwrap()
}

#[test]
fn c01_gradient_suite() {
    let _serial = exclusive();
    let start = Instant::now();
    let pairs: Vec<QAPair> = (0..12)
        .map(|i| QAPair::new(i, format!("where is item{i} ?"), format!("shelf{}", i % 3)))
        .collect();
    let vocab = vocab_for(&pairs, 2);
    let mut model = Model::new(ModelConfig::tiny(vocab.len()), 3).unwrap();
    assert_eq!(
        (
            model.config().encoder_layers,
            model.hidden(),
            model.prefix_len(),
            model.config().top_k
        ),
        (2, 16, 2, 2)
    );
    let memory = build_memory(&pairs, &model, &vocab).unwrap();
    let questions = QuestionIds::new(&memory, &vocab);
    let question = vocab.encode_with_eos(&pairs[0].question);
    let answer = vocab.encode_with_eos(&pairs[0].answer);
    let example = TrainingExample::from_pair(&vocab, &pairs[0], 12, 6).unwrap();
    let (q, _) = model.encode_query(&example.input).unwrap();
    let pool = exact_search(&memory, &q.flat, memory.len()).unwrap();
    let cfg = TrainConfig {
        m_negatives: 3,
        ..TrainConfig::default()
    };
    let plan = FinetunePlan::new(&pool, 2, &memory, &example.target_text, &cfg).unwrap();
    assert!(plan.trains_retriever());
    let positive = plan.labels.positives[0].id;
    let weights = LossWeights::finetune(&cfg);
    let retrieved: Vec<_> = plan
        .retrieved
        .iter()
        .map(|h| memory.get(h.id).unwrap().as_retrieved(h.score))
        .collect();

    let m = model.clone();
    let kae = |t: &mut Tape| {
        let block = m.key_block_var(t, &question)?;
        loss_kae_var(&m, t, block, &question)
    };
    let vae = |t: &mut Tape| {
        let block = m.value_block_var(t, &answer)?;
        loss_vae_var(&m, t, block, &answer)
    };
    let gen = |t: &mut Tape| {
        let rv = m.retrieved_leaves(t, &retrieved)?;
        Ok(loss_gen_var(&m, t, &example.input, &example.target, &rv)?.0)
    };
    let ret = |t: &mut Tape| {
        let rv = m.retrieved_leaves(t, &retrieved)?;
        let (_, fwd) = loss_gen_var(&m, t, &example.input, &example.target, &rv)?;
        loss_ret_var(&m, t, fwd.query_flat, positive, &plan.labels.negatives, &questions)
    };
    let total = |t: &mut Tape| {
        let mut choose = |_: &[f64]| Ok(positive);
        Ok(finetune_loss_var(&m, t, &example, &plan, &memory, &questions, weights, &mut choose)?.0)
    };
    type LossFn<'a> = &'a dyn Fn(&mut Tape) -> kvmem_core::Result<kvmem_core::numerics::Var>;
    let losses: [(&str, LossFn); 5] = [
        ("kae", &kae),
        ("vae", &vae),
        ("gen", &gen),
        ("ret", &ret),
        ("finetune", &total),
    ];
    let mut worst: Vec<(&str, GradCheckReport)> = Vec::new();
    for (name, f) in losses {
        let r = grad_check(model.params_mut(), 1e-5, 1e-4, |p| {
            let mut t = Tape::new(p);
            let l = f(&mut t)?;
            let g: Gradients = t.backward(l);
            Ok((t.scalar(l), g))
        })
        .unwrap();
        worst.push((name, r));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst.iter().all(|(_, r)| r.passed()) && secs < 120.0;
    let detail: Vec<String> = worst
        .iter()
        .map(|(n, r)| format!("{n} {:.1e} over {}", r.max_rel_error, r.entries_checked))
        .collect();
    report(1, ok, format!("max rel error {} in {secs:.0}s", detail.join(", ")));
    assert!(ok, "{worst:?}");
}

#[test]
fn c02_auto_encoding_capacity() {
    let _serial = exclusive();
    let start = Instant::now();
    let pairs: Vec<QAPair> = (0..64)
        .map(|i| {
            QAPair::new(
                i,
                format!("who keeps box{i} ?"),
                format!("clerk{} desk{}", i % 8, i / 8),
            )
        })
        .collect();
    let vocab = vocab_for(&pairs, 2);
    let cfg = ModelConfig {
        encoder_layers: 2,
        decoder_layers: 1,
        hidden: 32,
        heads: 2,
        ff_hidden: 64,
        vocab_size: vocab.len(),
        prefix_len: 2,
        key_layer: 1,
        concat_layer: 1,
        value_layer: 2,
        top_k: 2,
        max_input_len: 12,
        max_target_len: 8,
    };
    let mut model = Model::new(cfg, 1).unwrap();
    let mut memory = build_memory(&pairs, &model, &vocab).unwrap();
    let mut trainer = Trainer::new(TrainConfig {
        optimizer: OptimizerKind::Adam,
        learning_rate: 3e-3,
        neighbors: 2,
        ..TrainConfig::default()
    })
    .unwrap();
    for _ in 0..200 {
        trainer.pretrain_epoch(&mut model, &vocab, &mut memory, &pairs).unwrap();
    }
    let (mut questions, mut answers) = (0, 0);
    for p in &pairs {
        let e = memory.get(p.id).unwrap();
        let q = model.decode_from_block(&e.key_block, 8).unwrap();
        let a = model.decode_from_block(&e.value_block, 8).unwrap();
        questions += usize::from(q == vocab.encode(&p.question));
        answers += usize::from(a == vocab.encode(&p.answer));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = questions == 64 && answers == 64 && secs < 600.0;
    report(
        2,
        ok,
        format!("questions {questions}/64, answers {answers}/64 from blocks in {secs:.0}s"),
    );
    assert!(ok);
}

#[test]
fn c03_exact_search_matches_brute_force() {
    let _serial = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 32;
    let vectors: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let memory = vector_memory(&vectors);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut best: Vec<(f64, u64)> = Vec::new();
        for e in memory.entries() {
            let s: f64 = q.iter().zip(&e.key_flat).map(|(a, b)| a * b).sum();
            best.push((s, e.id));
        }
        best.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<u64> = best[..10].iter().map(|b| b.1).collect();
        if exact_search(&memory, &q, 10).unwrap().ids() != expected {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = mismatches == 0 && secs < 60.0;
    report(3, ok, format!("{mismatches}/1000 top-10 mismatches in {secs:.1}s"));
    assert!(ok);
}

#[test]
fn c04_hnsw_recall() {
    let _serial = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let memory = vector_memory(&unit_vectors(&mut rng, 10_000, 64));
    let params = HnswParams {
        m: 48,
        ..HnswParams::default()
    };
    let index = hnsw_build(&memory, params).unwrap();
    let queries = unit_vectors(&mut rng, 200, 64);
    let truth: Vec<HashSet<u64>> = queries
        .iter()
        .map(|q| exact_search(&memory, q, 10).unwrap().ids().into_iter().collect())
        .collect();
    let recall = |ef: usize| {
        let found: usize = queries
            .iter()
            .zip(&truth)
            .map(|(q, t)| {
                index
                    .search(q, 10, ef)
                    .unwrap()
                    .ids()
                    .iter()
                    .filter(|id| t.contains(id))
                    .count()
            })
            .sum();
        found as f64 / (10 * queries.len()) as f64
    };
    let curve: Vec<f64> = [16, 32, 64, 128].into_iter().map(recall).collect();
    let secs = start.elapsed().as_secs_f64();
    let ok = curve[2] >= 0.95 && curve.windows(2).all(|w| w[1] >= w[0]) && secs < 300.0;
    report(
        4,
        ok,
        format!("recall@10 at ef 16/32/64/128 = {curve:.3?} in {secs:.0}s"),
    );
    assert!(ok);
}

struct PipelineRun {
    task: SyntheticTask,
    vocab: Vocab,
    model: Model,
    memory: KeyValueMemory,
    hit_before: f64,
    hit_after: f64,
    em: f64,
    no_pretrain_em: f64,
    baseline_em: f64,
    secs: f64,
}

const K: usize = 8;

fn synthetic_model(vocab: &Vocab) -> Model {
    let cfg = ModelConfig {
        encoder_layers: 4,
        decoder_layers: 1,
        hidden: 32,
        heads: 2,
        ff_hidden: 64,
        vocab_size: vocab.len(),
        prefix_len: 2,
        key_layer: 2,
        concat_layer: 2,
        value_layer: 4,
        top_k: K,
        max_input_len: 16,
        max_target_len: 8,
    };
    Model::new(cfg, 7).unwrap()
}

fn finetune_config(k: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Adam,
        learning_rate: 3e-4,
        retrieved_k: Some(k),
        cache_pool_size: 2000,
        m_negatives: 8,
        w_ret: if k == 0 { 0.0 } else { 1.0 },
        ..TrainConfig::default()
    }
}

fn finetune(model: &mut Model, task: &SyntheticTask, vocab: &Vocab, k: usize, epochs: usize) -> KeyValueMemory {
    let mut memory = build_memory(&task.facts, model, vocab).unwrap();
    let mut train = examples(vocab, &task.train);
    let mut trainer = Trainer::new(finetune_config(k)).unwrap();
    for _ in 0..epochs {
        trainer.finetune_epoch(model, vocab, &mut memory, &mut train).unwrap();
    }
    memory
}

fn examples(vocab: &Vocab, pairs: &[QAPair]) -> Vec<TrainingExample> {
    pairs
        .iter()
        .map(|p| TrainingExample::from_pair(vocab, p, 16, 8).unwrap())
        .collect()
}

fn test_em(model: &Model, vocab: &Vocab, memory: &KeyValueMemory, pairs: &[QAPair], k: usize) -> f64 {
    let cfg = PipelineConfig {
        k,
        ..PipelineConfig::default()
    };
    let searcher = (k > 0).then(|| Searcher::exact(memory));
    evaluate_pairs(model, vocab, searcher, pairs, &cfg).unwrap().em
}

/// Pre-trains on the separate pre-training facts with the reconstruction
/// losses, then fine-tunes. The baseline and the no-pre-training run share
/// the fine-tuning schedule.
fn pipeline() -> &'static PipelineRun {
    static RUN: OnceLock<PipelineRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let task = synthetic_task(&SyntheticConfig::default()).unwrap();
        let vocab = task.vocab(2).unwrap();
        let epochs = 30;

        let mut model = synthetic_model(&vocab);
        let mut pre_memory = build_memory(&task.pretrain, &model, &vocab).unwrap();
        let mut pre = Trainer::new(TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            w_gen: 0.0,
            retrieved_k: Some(K),
            ..TrainConfig::default()
        })
        .unwrap();
        for _ in 0..15 {
            pre.pretrain_epoch(&mut model, &vocab, &mut pre_memory, &task.pretrain)
                .unwrap();
        }
        let pretrained = model.clone();

        let train = examples(&vocab, &task.train);
        let initial_memory = build_memory(&task.facts, &model, &vocab).unwrap();
        let hit_before = retrieval_hit_at_1(&model, &initial_memory, &train, TaskType::Short).unwrap();
        let memory = finetune(&mut model, &task, &vocab, K, epochs);
        let hit_after = retrieval_hit_at_1(&model, &memory, &train, TaskType::Short).unwrap();
        let em = test_em(&model, &vocab, &memory, &task.test, K);

        let mut scratch = synthetic_model(&vocab);
        let scratch_memory = finetune(&mut scratch, &task, &vocab, K, epochs);
        let no_pretrain_em = test_em(&scratch, &vocab, &scratch_memory, &task.test, K);

        let mut baseline = pretrained;
        let baseline_memory = finetune(&mut baseline, &task, &vocab, 0, epochs);
        let baseline_em = test_em(&baseline, &vocab, &baseline_memory, &task.test, 0);

        PipelineRun {
            task,
            vocab,
            model,
            memory,
            hit_before,
            hit_after,
            em,
            no_pretrain_em,
            baseline_em,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn c05_memory_beats_the_no_retrieval_baseline() {
    let _serial = exclusive();
    let run = pipeline();
    let gain = 100.0 * (run.em - run.baseline_em);
    let ok = gain >= 20.0 && run.secs < 1800.0;
    report(
        5,
        ok,
        format!(
            "test EM {:.3} with memory vs {:.3} at k=0 (+{gain:.1} points), pipeline {:.0}s",
            run.em, run.baseline_em, run.secs
        ),
    );
    assert!(ok);
}

#[test]
fn c06_pretraining_helps() {
    let _serial = exclusive();
    let run = pipeline();
    let ok = run.no_pretrain_em < run.em && run.secs < 2700.0;
    report(
        6,
        ok,
        format!(
            "test EM {:.3} without pre-training vs {:.3} with it",
            run.no_pretrain_em, run.em
        ),
    );
    assert!(ok);
}

#[test]
fn c07_retriever_training() {
    let _serial = exclusive();
    let run = pipeline();
    let chance = 1.0 / run.task.facts.len() as f64;
    let ok = run.hit_before <= 0.05 && run.hit_after >= 0.9;
    report(
        7,
        ok,
        format!(
            "held-in Hit@1 {:.3} -> {:.3} (chance {chance:.4})",
            run.hit_before, run.hit_after
        ),
    );
    assert!(ok);
}

#[test]
fn c08_caching_contract() {
    let _serial = exclusive();
    let pairs: Vec<QAPair> = (0..40)
        .map(|i| QAPair::new(i, format!("where is item{i} ?"), format!("shelf{}", i % 9)))
        .collect();
    let vocab = vocab_for(&pairs, 2);
    let mut model = Model::new(ModelConfig::tiny(vocab.len()), 5).unwrap();
    let mut memory = build_memory(&pairs, &model, &vocab).unwrap();
    let mut data: Vec<TrainingExample> = pairs[..16]
        .iter()
        .map(|p| TrainingExample::from_pair(&vocab, p, 12, 6).unwrap())
        .collect();
    let cache = FinetuneCache::build(&model, snapshot_for_epoch(&memory), &data, 8).unwrap();
    let first: Vec<Vec<u64>> = (0..data.len()).map(|i| cache.candidates(i).ids()).collect();

    // Weights change mid-epoch; the epoch's cached candidates must not.
    let mut trainer = Trainer::new(TrainConfig {
        optimizer: OptimizerKind::Adam,
        learning_rate: 1e-2,
        cache_pool_size: 8,
        ..TrainConfig::default()
    })
    .unwrap();
    let old_memory = memory.clone();
    trainer
        .finetune_epoch(&mut model, &vocab, &mut memory, &mut data)
        .unwrap();
    let stable = (0..data.len()).all(|i| cache.candidates(i).ids() == first[i])
        && data
            .iter()
            .zip(&first)
            .all(|(ex, f)| ex.cached_retrieval.as_ref() == Some(f));

    let refreshed = refresh_memory(&old_memory, &model, &vocab).unwrap();
    let fresh = FinetuneCache::build(&model, snapshot_for_epoch(&refreshed), &data, 8).unwrap();
    let changed = (0..data.len())
        .filter(|&i| fresh.candidates(i).ids() != first[i])
        .count();
    let ok = stable && changed >= 1;
    report(
        8,
        ok,
        format!(
            "ids stable within the epoch: {stable}; {changed}/{} candidate sets changed after refresh",
            data.len()
        ),
    );
    assert!(ok);
}

#[test]
fn c09_overlap_contract() {
    let _serial = exclusive();
    let pairs: Vec<QAPair> = (0..100)
        .map(|i| {
            QAPair::new(
                i,
                format!(
                    "which harbor did ship{i} leave from before the storm of year{} ?",
                    i % 13
                ),
                format!("port{}", i % 17),
            )
        })
        .collect();
    let vocab = vocab_for(&pairs, 2);
    let cfg = ModelConfig {
        hidden: 128,
        heads: 4,
        ff_hidden: 512,
        max_input_len: 24,
        top_k: 2,
        ..ModelConfig::twelve_layer(vocab.len(), LayerTaps::SKSV)
    };
    let model = Model::new(cfg, 9).unwrap();
    let memory = build_memory(&pairs, &model, &vocab).unwrap();
    let inputs: Vec<Vec<usize>> = pairs.iter().map(|p| vocab.encode_with_eos(&p.question)).collect();

    // Median over a few runs of six encoder layers on a typical query.
    let six_layers = {
        let ids = model.prefixed(&inputs[0]).unwrap();
        let mut runs: Vec<Duration> = (0..15)
            .map(|_| {
                let mut t = Tape::new(model.params());
                let x = model.embed_var(&mut t, &ids);
                let s = Instant::now();
                model.encoder_layers_var(&mut t, x, 0..6);
                s.elapsed()
            })
            .collect();
        runs.sort();
        runs[runs.len() / 2]
    };
    let run = |overlap: bool| {
        let cfg = PipelineConfig {
            mode: PipelineMode::Sksv,
            k: 2,
            overlap,
            simulated_search_delay: Some(six_layers),
            // Answers are one word; shorter decoding keeps timing noise down.
            max_answer_len: Some(2),
            ..PipelineConfig::default()
        };
        let s = Instant::now();
        let out: Vec<Vec<usize>> = inputs
            .iter()
            .map(|input| infer(&model, input, Searcher::exact(&memory), &cfg).unwrap().0.output)
            .collect();
        (s.elapsed(), out)
    };
    // Interleaved repetitions; the median of each mode damps scheduler noise.
    run(true);
    let (mut seq_times, mut over_times) = (Vec::new(), Vec::new());
    let (mut seq_out, mut over_out) = (Vec::new(), Vec::new());
    for _ in 0..5 {
        let (t, out) = run(false);
        seq_times.push(t);
        seq_out = out;
        let (t, out) = run(true);
        over_times.push(t);
        over_out = out;
    }
    let median_us = |mut v: Vec<Duration>| {
        v.sort();
        v[v.len() / 2].as_secs_f64() * 1e6 / inputs.len() as f64
    };
    let seq_us = median_us(seq_times);
    let over_us = median_us(over_times);
    let delay_us = six_layers.as_secs_f64() * 1e6;
    let identical = seq_out == over_out;
    let ok = identical && over_us <= seq_us - 0.8 * delay_us;
    report(
        9,
        ok,
        format!(
            "per query: overlapped {over_us:.0}us, sequential {seq_us:.0}us, delay {delay_us:.0}us; outputs identical: {identical}"
        ),
    );
    assert!(ok);
}

#[test]
fn c10_data_efficiency_sweeps() {
    let _serial = exclusive();
    let run = pipeline();
    let by_k: Vec<f64> = [1, 2, 4, 8]
        .into_iter()
        .map(|k| test_em(&run.model, &run.vocab, &run.memory, &run.task.test, k))
        .collect();
    let by_memory: Vec<f64> = [0.25, 0.5, 1.0]
        .into_iter()
        .map(|f| {
            let memory = build_memory(&run.task.fact_subset(f, 11), &run.model, &run.vocab).unwrap();
            test_em(&run.model, &run.vocab, &memory, &run.task.test, K)
        })
        .collect();
    let ok = by_k.windows(2).all(|w| w[1] >= w[0] - 0.01) && by_memory.windows(2).all(|w| w[1] >= w[0]);
    report(
        10,
        ok,
        format!("test EM at k 1/2/4/8 = {by_k:.3?}; at memory 25/50/100% = {by_memory:.3?}"),
    );
    assert!(ok);
}

#[test]
fn c11_positive_sampling_fidelity() {
    let _serial = exclusive();
    let keys = [
        vec![0.9, -0.2, 0.4],
        vec![0.1, 0.8, -0.3],
        vec![-0.5, 0.3, 0.7],
        vec![1.0, 1.0, 1.0],
    ];
    let memory = vector_memory(&keys);
    let labels = WeakLabels {
        positives: [0, 1, 2].map(|id| Hit { id, score: 0.0 }).to_vec(),
        negatives: vec![3],
    };
    let q = [1.2, 0.4, -0.6];
    let logits: Vec<f64> = (0..3)
        .map(|i| {
            let e = memory.get(i as u64).unwrap();
            q.iter().zip(&e.key_flat).map(|(a, b)| a * b).sum()
        })
        .collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let expected: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
    let library = positive_probabilities(&labels, &q, &memory).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 3];
    for _ in 0..10_000 {
        counts[sample_positive(&labels, &q, &memory, &mut rng).unwrap() as usize] += 1;
    }
    let tv: f64 = 0.5
        * counts
            .iter()
            .zip(&expected)
            .map(|(&c, p)| (c as f64 / 10_000.0 - p).abs())
            .sum::<f64>();
    let agrees = library.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12);
    let ok = tv <= 0.02 && agrees;
    report(
        11,
        ok,
        format!("TV distance {tv:.4} between {counts:?}/10000 and softmax {expected:.3?}"),
    );
    assert!(ok);
}
