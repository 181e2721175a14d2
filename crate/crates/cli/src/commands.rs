use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use lbnl_core::backbone::BackboneConfig;
use lbnl_core::eval::{evaluate_run, generate_synthetic_corpus, Metric, Qrels, Run, SynthConfig};
use lbnl_core::gradcheck::{self, Component, THRESHOLD};
use lbnl_core::head::ProjectorConfig;
use lbnl_core::io::{parse_jsonl, read_jsonl, write_jsonl};
use lbnl_core::model::{Model, ModelConfig};
use lbnl_core::prompt::{template_words, Document, Ordering, RequestRecord, Vocabulary};
use lbnl_core::reranker::{rerank_records, RerankOptions};
use lbnl_core::trainer::{
    mean_ndcg_at_10, merge_checkpoints, mine_hard_negatives, train_stage, HashedScorer, LexicalScorer, MiningConfig,
    Monitor, Scorer, StageConfig, TrainMode, TrainingExample,
};

use crate::args::*;
use crate::GradcheckFailed;

fn announce(command: &str, resolved: &impl Serialize) {
    let json = serde_json::to_string(resolved).unwrap_or_else(|e| format!("<unprintable: {e}>"));
    eprintln!("lbnl {command} {json}");
}

/// Query and document texts of a request or training JSONL file.
fn texts_of(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let source = path.display().to_string();
    if let Ok(records) = parse_jsonl::<RequestRecord>(&text, &source) {
        return Ok(records
            .into_iter()
            .flat_map(|r| std::iter::once(r.query_text).chain(r.docs.into_iter().map(|d| d.text)))
            .collect());
    }
    let examples: Vec<TrainingExample> = parse_jsonl(&text, &source)?;
    Ok(examples
        .into_iter()
        .flat_map(|e| {
            [e.query, e.positive.text]
                .into_iter()
                .chain(e.negatives.into_iter().map(|d| d.text))
        })
        .collect())
}

pub fn init(a: &InitArgs) -> Result<()> {
    announce("init", a);
    let mut texts = Vec::new();
    for p in &a.texts {
        texts.extend(texts_of(p)?);
    }
    let words = template_words(a.max_docs_per_pass);
    let vocab = Vocabulary::build(
        words.iter().map(String::as_str),
        texts.iter().map(String::as_str),
        Some(a.vocab_size),
    );
    let backbone = BackboneConfig {
        n_layers: a.layers,
        d_hidden: a.d_hidden,
        n_q_heads: a.heads,
        n_kv_heads: a.kv_heads,
        d_ffn: a.d_ffn,
        max_context: a.max_context,
        effective_context: a.max_context,
        vocab_size: a.vocab_size,
        ..Default::default()
    };
    let config = ModelConfig {
        projector: ProjectorConfig::toy(backbone.d_hidden),
        backbone,
    };
    let model = Model::init(config, vocab, a.seed)?;
    model.save(&a.out)?;
    eprintln!("wrote {} (vocabulary {} entries)", a.out.display(), model.vocab.len());
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    announce("synth", a);
    let corpus = generate_synthetic_corpus(&SynthConfig {
        n_queries: a.n_queries,
        docs_per_query: a.docs_per_query,
        seed: a.seed,
        ..Default::default()
    })?;
    corpus.write_to_dir(&a.out)?;
    eprintln!("wrote {} queries to {}", corpus.records.len(), a.out.display());
    Ok(())
}

fn ordering(arg: OrderingArg, seed: u64) -> Ordering {
    match arg {
        OrderingArg::Given => Ordering::AsGiven,
        OrderingArg::Desc => Ordering::Descending,
        OrderingArg::Asc => Ordering::Ascending,
        OrderingArg::Random => Ordering::Random(seed),
    }
}

pub fn rerank(a: &RerankArgs) -> Result<()> {
    announce("rerank", a);
    let model = Model::load(&a.model)?;
    let records: Vec<RequestRecord> = read_jsonl(&a.input)?;
    let options = RerankOptions {
        max_docs_per_pass: a.max_docs_per_pass,
        max_doc_tokens: a.max_doc_tokens,
        max_query_tokens: a.max_query_tokens,
        pin_first_query_embedding: a.pin_query_embedding,
    };
    let run = rerank_records(&model, &records, ordering(a.ordering, a.seed), &options, &a.tag)?;
    std::fs::write(&a.output, run.to_trec()).with_context(|| format!("writing {}", a.output.display()))?;
    eprintln!("ranked {} queries into {}", run.queries.len(), a.output.display());
    Ok(())
}

fn stage_config(a: &TrainArgs) -> Result<StageConfig> {
    let mut cfg = match &a.stage_config {
        Some(p) => StageConfig::load(p)?,
        None => StageConfig::preset(&a.preset)?,
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainReport {
    steps: usize,
    final_total: Option<f64>,
    reached_target: bool,
    #[serde(rename = "training_ndcg@10")]
    training_ndcg_at_10: Option<f64>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    announce("train", a);
    let cfg = stage_config(a)?;
    eprint!("{}", cfg.to_toml());
    let model = Model::load(&a.model)?;
    let data: Vec<TrainingExample> = read_jsonl(&a.data)?;
    let eval = match (&a.eval_requests, &a.eval_qrels) {
        (Some(r), Some(q)) => Some((read_jsonl::<RequestRecord>(r)?, Qrels::load(q)?)),
        _ => None,
    };
    let monitor = eval.as_ref().map(|(records, qrels)| Monitor {
        records,
        qrels,
        ordering: Ordering::AsGiven,
    });

    let trace_path = a.trace.clone().unwrap_or_else(|| {
        let mut p = a.out_checkpoint.clone().into_os_string();
        p.push(".trace.jsonl");
        PathBuf::from(p)
    });
    let mut trace =
        BufWriter::new(File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?);
    let mut write_err = None;
    let outcome = train_stage(model, &data, &cfg, monitor.as_ref(), |r| {
        let line = serde_json::to_string(r).expect("step record serializes");
        if let Err(e) = writeln!(trace, "{line}") {
            write_err.get_or_insert(e);
        }
        if let Some(n) = r.ndcg_at_10 {
            eprintln!("step {} total {:.6} ndcg@10 {:.4}", r.step, r.total, n);
        }
    });
    trace.flush()?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", trace_path.display()));
    }
    let outcome = outcome?;
    outcome.model.save(&a.out_checkpoint)?;

    let ndcg = match &monitor {
        Some(m) => Some(mean_ndcg_at_10(&outcome.model, m.records, m.qrels, m.ordering)?),
        None => None,
    };
    let report = TrainReport {
        steps: outcome.steps,
        final_total: outcome.trace.last().map(|r| r.total),
        reached_target: outcome.reached_target,
        training_ndcg_at_10: ndcg,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn merge(a: &MergeArgs) -> Result<()> {
    announce("merge", a);
    let spec = StageConfig::load(&a.spec)?;
    if spec.mode != TrainMode::Merge {
        return Err(lbnl_core::Error::Config(format!("{}: mode must be \"merge\"", a.spec.display())).into());
    }
    let base = a.spec.parent().unwrap_or(Path::new("."));
    let paths: Vec<PathBuf> = spec.merge_checkpoints.iter().map(|p| base.join(p)).collect();
    let model = merge_checkpoints(&paths, &spec.merge_weights)?;
    model.save(&a.out)?;
    eprintln!("merged {} checkpoints into {}", paths.len(), a.out.display());
    Ok(())
}

pub fn mine(a: &MineArgs) -> Result<()> {
    announce("mine", a);
    let records: Vec<RequestRecord> = read_jsonl(&a.requests)?;
    let qrels = Qrels::load(&a.qrels)?;
    let mut seen = BTreeSet::new();
    let corpus: Vec<Document> = records
        .iter()
        .flat_map(|r| r.docs.iter())
        .filter(|d| seen.insert(d.id.clone()))
        .cloned()
        .collect();
    let queries: Vec<(String, String)> = records
        .iter()
        .map(|r| (r.query_id.clone(), r.query_text.clone()))
        .collect();
    let hashed = HashedScorer { seed: a.seed, dim: 64 };
    let scorers: [&dyn Scorer; 2] = [&LexicalScorer, &hashed];
    let config = MiningConfig {
        pool_size: a.pool_size,
        negatives_per_query: a.negatives,
    };
    let examples = mine_hard_negatives(&queries, &corpus, &qrels, &scorers, &config)?;
    write_jsonl(&a.out, &examples)?;
    eprintln!("wrote {} examples to {}", examples.len(), a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    announce("eval", a);
    let run = Run::load(&a.run)?;
    let qrels = Qrels::load(&a.qrels)?;
    let metric = match a.metric {
        MetricArg::Ndcg => Metric::Ndcg,
        MetricArg::Recall => Metric::Recall,
    };
    print!("{}", evaluate_run(&run, &qrels, metric, a.k)?.to_text());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    announce("gradcheck", a);
    let components: Vec<Component> = match a.component {
        ComponentArg::All => Component::ALL.to_vec(),
        ComponentArg::Losses => vec![Component::Losses],
        ComponentArg::Backbone => vec![Component::Backbone],
        ComponentArg::Projector => vec![Component::Projector],
        ComponentArg::Lora => vec![Component::Lora],
    };
    if a.seeds == 0 {
        bail!(lbnl_core::Error::Validation("--seeds must be at least 1".into()));
    }
    let mut overall = 0.0f64;
    for seed in a.seed..a.seed + a.seeds {
        for &c in &components {
            let checks = gradcheck::check_component(c, seed)?;
            let w = gradcheck::worst(&checks);
            let target = checks
                .iter()
                .max_by(|x, y| x.rel_error.total_cmp(&y.rel_error))
                .map_or("", |k| k.target.as_str());
            println!(
                "component={c} seed={seed} checks={} worst={w:.3e} at={target}",
                checks.len()
            );
            overall = overall.max(w);
        }
    }
    println!("worst={overall:.3e} threshold={THRESHOLD:.0e}");
    if overall >= THRESHOLD {
        return Err(GradcheckFailed(overall).into());
    }
    Ok(())
}
