use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use kvmem_core::data::{load_knowledge_source, QAPair, TrainingExample, Vocab};
use kvmem_core::inference::{
    answer_question, bench_throughput, infer, IndexKind, PipelineConfig, PipelineMode, Searcher,
};
use kvmem_core::memory::{build_memory, hnsw_build, load_memory, save_memory, HnswIndex, HnswParams, KeyValueMemory};
use kvmem_core::metrics::evaluate_em_f1;
use kvmem_core::model::{load_checkpoint, save_checkpoint, Model};
use kvmem_core::training::{retrieval_hit_at_1, LossReport, LossWeights, Trainer};
use kvmem_core::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::{default_path, Manifest};
use crate::{Cli, Command, Flags, IndexArg, ModeArg};

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Input(format!("--{flag} is required for this command")))
}

fn load_model(path: &Path) -> Result<(Model, Vocab)> {
    let (model, vocab) = load_checkpoint(path)?;
    let vocab = vocab.ok_or_else(|| Error::Format(format!("{} has no vocabulary", path.display())))?;
    Ok((model, vocab))
}

fn load_matching_memory(path: &Path, model: &Model) -> Result<KeyValueMemory> {
    let memory = load_memory(path)?;
    if memory.hidden() != model.hidden() || memory.prefix_len() != model.prefix_len() {
        return Err(Error::State(format!(
            "memory {} holds {}x{} blocks, the model uses {}x{}",
            path.display(),
            memory.prefix_len(),
            memory.hidden(),
            model.prefix_len(),
            model.hidden()
        )));
    }
    Ok(memory)
}

fn load_pairs(path: &Path) -> Result<Vec<QAPair>> {
    let pairs = load_knowledge_source(path)?;
    if pairs.is_empty() {
        return Err(Error::Input(format!("{} has no records", path.display())));
    }
    Ok(pairs)
}

fn pipeline_config(flags: &Flags, model: &Model) -> PipelineConfig {
    PipelineConfig {
        mode: match flags.mode {
            None => PipelineMode::Model,
            Some(ModeArg::Fksv) => PipelineMode::Fksv,
            Some(ModeArg::Sksv) => PipelineMode::Sksv,
        },
        index: match flags.index {
            IndexArg::Exact => IndexKind::Exact,
            IndexArg::Hnsw => IndexKind::Hnsw,
        },
        ef_search: flags.ef_search,
        k: flags.k.unwrap_or(model.config().top_k),
        simulated_search_delay: flags.simulate_search_delay_us.map(Duration::from_micros),
        overlap: true,
        max_answer_len: None,
    }
}

fn graph_index(flags: &Flags, memory: &KeyValueMemory) -> Result<Option<HnswIndex>> {
    match flags.index {
        IndexArg::Exact => Ok(None),
        IndexArg::Hnsw => hnsw_build(
            memory,
            HnswParams {
                seed: flags.seed,
                ef_search: flags.ef_search,
                ..HnswParams::default()
            },
        )
        .map(Some),
    }
}

fn searcher<'a>(memory: &'a KeyValueMemory, index: &'a Option<HnswIndex>) -> Searcher<'a> {
    match index {
        Some(ix) => Searcher::with_index(memory, ix),
        None => Searcher::exact(memory),
    }
}

fn examples(pairs: &[QAPair], vocab: &Vocab, model: &Model) -> Result<Vec<TrainingExample>> {
    let c = model.config();
    pairs
        .iter()
        .map(|p| TrainingExample::from_pair(vocab, p, c.max_input_len - c.prefix_len, c.max_target_len))
        .collect()
}

fn write_json_lines<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn training_config_json(model: &Model, cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({ "model": model.config(), "train": cfg.train })
}

fn inference_config_json(model: &Model, pc: &PipelineConfig) -> serde_json::Value {
    serde_json::json!({ "model": model.config(), "pipeline": pc })
}

pub(crate) fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let flags = &cli.flags;
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.train.seed = flags.seed;
    let mut manifest = match &cli.command {
        Command::BuildMemory => build_memory_cmd(flags, out)?,
        Command::Pretrain => pretrain(flags, &cfg, out)?,
        Command::Finetune => finetune(flags, &mut cfg, out)?,
        Command::Eval => eval(flags, out)?,
        Command::Query { text } => query(flags, text, out)?,
        Command::Bench { reps } => bench(flags, *reps, out)?,
    };
    if let Some(p) = &flags.config {
        manifest.input(p)?;
    }
    let path = flags
        .manifest
        .clone()
        .unwrap_or_else(|| default_path(&manifest.command, flags.out.as_deref()));
    manifest.write(&path)
}

fn build_memory_cmd(flags: &Flags, out: &mut dyn Write) -> Result<Manifest> {
    let model_path = require(&flags.model, "model")?;
    let data_path = require(&flags.data, "data")?;
    let out_path = require(&flags.out, "out")?;
    let (model, vocab) = load_model(model_path)?;
    let pairs = load_pairs(data_path)?;
    let memory = build_memory(&pairs, &model, &vocab)?;
    save_memory(&memory, out_path)?;
    writeln!(out, "wrote {} entries to {}", memory.len(), out_path.display())?;

    let mut m = Manifest::new(
        "build-memory",
        flags.seed,
        serde_json::json!({ "model": model.config() }),
    );
    m.input(model_path)?;
    m.input(data_path)?;
    m.output(out_path);
    Ok(m)
}

fn new_model(flags: &Flags, cfg: &RunConfig, pairs: &[QAPair]) -> Result<(Model, Vocab)> {
    let mut text: Vec<String> = pairs
        .iter()
        .flat_map(|p| [p.question.clone(), p.answer.clone()])
        .collect();
    for extra in &flags.vocab_data {
        for p in load_knowledge_source(extra)? {
            text.push(p.question);
            text.push(p.answer);
        }
    }
    let vocab = Vocab::build(&text, cfg.model.max_vocab, cfg.model.prefix_len)?;
    let model = Model::new(cfg.model.config(vocab.len()), flags.seed)?;
    Ok((model, vocab))
}

fn pretrain(flags: &Flags, cfg: &RunConfig, out: &mut dyn Write) -> Result<Manifest> {
    let data_path = require(&flags.data, "data")?;
    let out_path = require(&flags.out, "out")?;
    let pairs = load_pairs(data_path)?;
    let (mut model, vocab) = match &flags.model {
        Some(p) => load_model(p)?,
        None => new_model(flags, cfg, &pairs)?,
    };
    let mut memory = build_memory(&pairs, &model, &vocab)?;
    let mut trainer = Trainer::new(cfg.train.clone())?;
    let w = LossWeights::pretrain(&cfg.train);
    for epoch in 0..cfg.train.epochs {
        let reports = trainer.pretrain_epoch(&mut model, &vocab, &mut memory, &pairs)?;
        let m = LossReport::mean(&reports, w);
        writeln!(
            out,
            "epoch {epoch}: loss {:.4} (kae {:.4}, vae {:.4}, gen {:.4})",
            m.weighted_total, m.kae, m.vae, m.gen
        )?;
    }
    save_checkpoint(out_path, &model, Some(&vocab))?;

    let mut m = Manifest::new("pretrain", flags.seed, training_config_json(&model, cfg));
    if let Some(p) = &flags.model {
        m.input(p)?;
    }
    m.input(data_path)?;
    for p in &flags.vocab_data {
        m.input(p)?;
    }
    m.output(out_path);
    Ok(m)
}

fn finetune(flags: &Flags, cfg: &mut RunConfig, out: &mut dyn Write) -> Result<Manifest> {
    let model_path = require(&flags.model, "model")?;
    let memory_path = require(&flags.memory, "memory")?;
    let data_path = require(&flags.data, "data")?;
    let out_path = require(&flags.out, "out")?;
    let (mut model, vocab) = load_model(model_path)?;
    let mut memory = load_matching_memory(memory_path, &model)?;
    let pairs = load_pairs(data_path)?;
    let mut dataset = examples(&pairs, &vocab, &model)?;
    if flags.k.is_some() {
        cfg.train.retrieved_k = flags.k;
    }
    let mut trainer = Trainer::new(cfg.train.clone())?;
    let w = LossWeights::finetune(&cfg.train);
    for epoch in 0..cfg.train.epochs {
        let reports = trainer.finetune_epoch(&mut model, &vocab, &mut memory, &mut dataset)?;
        let m = LossReport::mean(&reports, w);
        let hit = retrieval_hit_at_1(&model, &memory, &dataset, cfg.train.task_type)?;
        writeln!(
            out,
            "epoch {epoch}: loss {:.4} (gen {:.4}, ret {:.4}) hit@1 {hit:.3}",
            m.weighted_total, m.gen, m.ret
        )?;
    }
    save_checkpoint(out_path, &model, Some(&vocab))?;

    let mut m = Manifest::new("finetune", flags.seed, training_config_json(&model, cfg));
    m.input(model_path)?;
    m.input(memory_path)?;
    m.input(data_path)?;
    m.output(out_path);
    Ok(m)
}

#[derive(serde::Serialize)]
struct Prediction<'a> {
    id: u64,
    question: &'a str,
    prediction: String,
    answer: &'a str,
}

fn eval(flags: &Flags, out: &mut dyn Write) -> Result<Manifest> {
    let model_path = require(&flags.model, "model")?;
    let data_path = require(&flags.data, "data")?;
    let (model, vocab) = load_model(model_path)?;
    let pc = PipelineConfig {
        overlap: false,
        ..pipeline_config(flags, &model)
    };
    let memory = match pc.k {
        0 => None,
        _ => Some(load_matching_memory(require(&flags.memory, "memory")?, &model)?),
    };
    let index = match &memory {
        Some(mem) => graph_index(flags, mem)?,
        None => None,
    };
    let pairs = load_pairs(data_path)?;
    let s = memory.as_ref().map(|mem| searcher(mem, &index));
    let predictions = pairs
        .iter()
        .map(|p| answer_question(&model, &vocab, &p.question, s, &pc))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&str> = pairs.iter().map(|p| p.answer.as_str()).collect();
    let score = evaluate_em_f1(&predictions, &refs)?;
    writeln!(out, "EM={:.4} F1={:.4}", score.em, score.f1)?;

    let mut m = Manifest::new("eval", flags.seed, inference_config_json(&model, &pc));
    m.input(model_path)?;
    if memory.is_some() {
        m.input(require(&flags.memory, "memory")?)?;
    }
    m.input(data_path)?;
    if let Some(path) = &flags.out {
        let rows: Vec<Prediction> = pairs
            .iter()
            .zip(predictions)
            .map(|(p, prediction)| Prediction {
                id: p.id,
                question: &p.question,
                prediction,
                answer: &p.answer,
            })
            .collect();
        write_json_lines(path, &rows)?;
        m.output(path);
    }
    Ok(m)
}

fn query(flags: &Flags, text: &str, out: &mut dyn Write) -> Result<Manifest> {
    let model_path = require(&flags.model, "model")?;
    let memory_path = require(&flags.memory, "memory")?;
    let (model, vocab) = load_model(model_path)?;
    let memory = load_matching_memory(memory_path, &model)?;
    let index = graph_index(flags, &memory)?;
    let pc = pipeline_config(flags, &model);
    let input = vocab.encode_with_eos(text);
    let (result, timing) = infer(&model, &input, searcher(&memory, &index), &pc)?;

    let mut lines = vec![format!("answer: {}", vocab.decode(&result.output))];
    for (rank, hit) in result.retrieved.hits.iter().enumerate() {
        let e = memory.get(hit.id).expect("search returns stored ids");
        lines.push(format!(
            "{:>2}. {:+.4}  {} -> {}",
            rank + 1,
            hit.score,
            e.question,
            e.answer
        ));
    }
    lines.push(format!("timing: {}", timing.to_json()));
    for l in &lines {
        writeln!(out, "{l}")?;
    }

    let mut m = Manifest::new("query", flags.seed, inference_config_json(&model, &pc));
    m.input(model_path)?;
    m.input(memory_path)?;
    if let Some(path) = &flags.out {
        std::fs::write(path, lines[..lines.len() - 1].join("\n") + "\n")?;
        m.output(path);
    }
    Ok(m)
}

fn bench(flags: &Flags, reps: usize, out: &mut dyn Write) -> Result<Manifest> {
    let model_path = require(&flags.model, "model")?;
    let memory_path = require(&flags.memory, "memory")?;
    let data_path = require(&flags.data, "data")?;
    let (model, vocab) = load_model(model_path)?;
    let memory = load_matching_memory(memory_path, &model)?;
    let index = graph_index(flags, &memory)?;
    let pc = pipeline_config(flags, &model);
    let inputs: Vec<Vec<usize>> = load_pairs(data_path)?
        .iter()
        .map(|p| vocab.encode_with_eos(&p.question))
        .collect();
    let report = bench_throughput(&model, &inputs, searcher(&memory, &index), &pc, reps)?;
    writeln!(out, "{}", report.to_json())?;

    let mut m = Manifest::new("bench", flags.seed, inference_config_json(&model, &pc));
    m.input(model_path)?;
    m.input(memory_path)?;
    m.input(data_path)?;
    if let Some(path) = &flags.out {
        std::fs::write(path, report.to_json() + "\n")?;
        m.output(path);
    }
    Ok(m)
}
