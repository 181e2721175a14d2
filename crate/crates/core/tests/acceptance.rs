//! Acceptance gate. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lbnl_core::eval::{
    generate_synthetic_corpus, ndcg_at_k, recall_at_k, Gain, Judgments, SynthConfig, SyntheticCorpus,
};
use lbnl_core::gradcheck::{self, Component, THRESHOLD};
use lbnl_core::losses::{
    disperse_loss_value, dual_loss_value, rank_loss_value, similar_loss_value, LossWeights, QueryGroup, TrainingBatch,
};
use lbnl_core::model::{Model, ModelConfig};
use lbnl_core::prompt::{
    apply_ordering, build_prompt, scan_special, template_words, Document, Ordering, PromptOptions, RerankRequest,
    Special, Vocabulary,
};
use lbnl_core::reranker::{rerank, RerankOptions};
use lbnl_core::trainer::{mean_ndcg_at_10, merge_checkpoints, merge_models, train_stage, Monitor, StageConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let (mut worst, mut at, mut checks) = (0.0f64, String::new(), 0usize);
    for seed in 0..20 {
        for c in Component::ALL {
            for k in ok(gradcheck::check_component(c, seed))? {
                checks += 1;
                if k.rel_error > worst || k.rel_error.is_nan() {
                    worst = k.rel_error;
                    at = format!("{c}/{} seed {seed}", k.target);
                }
            }
        }
    }
    let took = start.elapsed();
    ensure!(worst < THRESHOLD, "worst relative error {worst:.3e} at {at}");
    ensure!(took < Duration::from_secs(120), "took {took:.1?}");
    Ok(format!(
        "{checks} checks over 20 seeds, worst {worst:.2e} ({at}), {took:.1?}"
    ))
}

fn group(query: Vec<f64>, positive: Vec<f64>, negatives: Vec<Vec<f64>>) -> QueryGroup<Vec<f64>> {
    QueryGroup {
        query,
        dual_query: None,
        positive,
        negatives,
        augmented: None,
        inbatch_negatives: Vec::new(),
    }
}

fn closed_form_losses() -> Outcome {
    let mut worst = 0.0f64;
    for k in [1usize, 9, 15, 25] {
        let v = vec![0.3, -1.2, 0.7];
        for tau in [0.05, 0.25, 1.0] {
            let batch = TrainingBatch {
                groups: vec![group(v.clone(), v.clone(), vec![v.clone(); k])],
                temperature: tau,
            };
            let got = ok(rank_loss_value(&batch))?;
            let err = (got - ((k + 1) as f64).ln()).abs();
            ensure!(err <= 1e-9, "K={k} τ={tau}: {got} vs ln({})", k + 1);
            worst = worst.max(err);
        }
    }
    let e = |i: usize| (0..3).map(|j| f64::from(u8::from(i == j))).collect::<Vec<_>>();
    let batch = TrainingBatch {
        groups: vec![group(e(0), e(0), vec![e(1), e(2)])],
        temperature: 0.25,
    };
    let got = ok(disperse_loss_value(&batch))?;
    let err = (got - 1.5f64.ln()).abs();
    ensure!(err <= 1e-9, "disperse K=2 zero similarity {got} vs ln(3/2)");
    Ok(format!(
        "uniform InfoNCE K∈{{1,9,15,25}} and disperse ln(3/2), worst {:.1e}",
        worst.max(err)
    ))
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_batch(rng: &mut ChaCha8Rng) -> TrainingBatch<Vec<f64>> {
    let d = rng.random_range(2..9);
    let groups = (0..rng.random_range(1..5))
        .map(|_| {
            let k = rng.random_range(1..8);
            let inbatch = rng.random_range(0..4);
            QueryGroup {
                query: random_vec(rng, d),
                dual_query: Some(random_vec(rng, d)),
                positive: random_vec(rng, d),
                negatives: (0..k).map(|_| random_vec(rng, d)).collect(),
                augmented: Some(random_vec(rng, d)),
                inbatch_negatives: (0..inbatch).map(|_| random_vec(rng, d)).collect(),
            }
        })
        .collect();
    TrainingBatch {
        groups,
        temperature: rng.random_range(0.05..1.0),
    }
}

fn loss_composition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let batch = random_batch(&mut rng);
        let total = ok(batch.evaluate(&LossWeights::default()))?.total;
        let expected = ok(rank_loss_value(&batch))?
            + 0.45 * ok(disperse_loss_value(&batch))?
            + 0.85 * ok(dual_loss_value(&batch))?
            + 0.85 * ok(similar_loss_value(&batch))?;
        worst = worst.max((total - expected).abs());
    }
    ensure!(worst <= 1e-12, "total differs from the weighted sum by {worst:.3e}");
    Ok(format!("200 random batches, worst {worst:.1e}"))
}

const GOLDEN_QUERY: &str = "how do tides form";
const GOLDEN_DOCS: [&str; 5] = [
    "the moon pulls on ocean water",
    "volcanoes erupt molten rock",
    "tides rise and fall twice a day",
    "bread needs yeast to rise",
    "gravity of the sun also shapes tides",
];

fn template_fidelity() -> Outcome {
    let words = template_words(8);
    let vocab = Vocabulary::build(
        words.iter().map(String::as_str),
        GOLDEN_DOCS.iter().copied().chain([GOLDEN_QUERY]),
        None,
    );
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for k in [1usize, 2, 5] {
        let golden = ok(std::fs::read_to_string(dir.join(format!("prompt_k{k}.txt"))))?;
        let docs = GOLDEN_DOCS[..k]
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t))
            .collect();
        let layout = ok(build_prompt(
            &vocab,
            &RerankRequest::new(GOLDEN_QUERY, docs),
            &PromptOptions::default(),
        ))?;
        ensure!(layout.text == golden, "k={k}: rendered prompt differs from golden file");

        let ids = &layout.token_ids;
        let doc_markers = scan_special(&vocab, ids, Special::DocEmb);
        ensure!(
            doc_markers == layout.doc_marker_positions,
            "k={k}: doc marker positions disagree with the ids"
        );
        ensure!(doc_markers.len() == k, "k={k}: {} doc markers", doc_markers.len());
        for (slot, &p) in doc_markers.iter().enumerate() {
            let last = *vocab.tokenize(GOLDEN_DOCS[slot]).last().unwrap();
            ensure!(ids[p - 1] == last, "k={k}: marker {slot} does not follow its document");
        }
        let query_markers = scan_special(&vocab, ids, Special::QueryEmb);
        ensure!(
            query_markers == [layout.query_marker_position],
            "k={k}: expected one query marker, found {query_markers:?}"
        );
        let q = layout.query_marker_position;
        let last_query_word = *vocab.tokenize(GOLDEN_QUERY).last().unwrap();
        ensure!(
            ids[q - 1] == last_query_word,
            "k={k}: query marker does not follow the trailing query"
        );
        ensure!(
            q > *doc_markers.last().unwrap(),
            "k={k}: query marker precedes a document"
        );
        ensure!(
            ids[ids.len() - 1] == vocab.special(Special::ImEnd),
            "k={k}: prompt does not close the turn"
        );
        let decoded = ok(vocab.detokenize(ids))?;
        let squash = |s: &str| s.split_whitespace().collect::<String>();
        ensure!(
            squash(&decoded) == squash(&golden),
            "k={k}: token ids do not encode the golden text"
        );
    }
    Ok("k∈{1,2,5} byte-identical, markers after each document and the trailing query".into())
}

fn toy_model(vocab: Vocabulary, seed: u64) -> Result<Model, String> {
    ok(Model::init(ModelConfig::toy(), vocab, seed))
}

fn causality() -> Outcome {
    let corpus = ok(generate_synthetic_corpus(&SynthConfig::default()))?;
    let model = toy_model(corpus_vocab(&corpus, 16), 5)?;
    let n_vocab = model.vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut compared = 0usize;
    for trial in 0..1000 {
        let len = rng.random_range(2..48);
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..n_vocab)).collect();
        let p = rng.random_range(0..len);
        let mut perturbed = tokens.clone();
        while perturbed[p] == tokens[p] {
            perturbed[p] = rng.random_range(0..n_vocab);
        }
        let a = ok(model.hidden(&tokens))?;
        let b = ok(model.hidden(&perturbed))?;
        for row in 0..p {
            let same = a
                .row(row)
                .iter()
                .zip(b.row(row))
                .all(|(x, y)| x.to_bits() == y.to_bits());
            ensure!(same, "trial {trial}: row {row} changed after perturbing position {p}");
            compared += 1;
        }
        ensure!(
            a.row(p) != b.row(p),
            "trial {trial}: perturbed position {p} left its own row unchanged"
        );
    }
    Ok(format!("1000 trials, {compared} earlier rows bit-identical"))
}

fn corpus_vocab(corpus: &SyntheticCorpus, max_docs: usize) -> Vocabulary {
    let words = template_words(max_docs);
    Vocabulary::build(words.iter().map(String::as_str), corpus.texts(), None)
}

fn overfit(trained: &mut Option<(Model, SyntheticCorpus)>) -> Outcome {
    let corpus = ok(generate_synthetic_corpus(&SynthConfig::default()))?;
    ensure!(
        corpus.records.len() == 50 && corpus.records.iter().all(|r| r.docs.len() == 8),
        "corpus is not 50 queries × 8 documents"
    );
    let model = toy_model(corpus_vocab(&corpus, 16), 0)?;
    let baseline = ok(mean_ndcg_at_10(
        &model,
        &corpus.records,
        &corpus.qrels,
        Ordering::AsGiven,
    ))?;
    let config = StageConfig::toy_overfit();
    let monitor = Monitor {
        records: &corpus.records,
        qrels: &corpus.qrels,
        ordering: Ordering::AsGiven,
    };
    let start = Instant::now();
    let outcome = ok(train_stage(
        model,
        &corpus.training_examples(),
        &config,
        Some(&monitor),
        |_| {},
    ))?;
    let took = start.elapsed();
    let final_ndcg = ok(mean_ndcg_at_10(
        &outcome.model,
        &corpus.records,
        &corpus.qrels,
        Ordering::AsGiven,
    ))?;
    let steps = outcome.steps;
    *trained = Some((outcome.model, corpus));
    ensure!(baseline <= 0.6, "untrained baseline nDCG@10 {baseline:.4} exceeds 0.6");
    ensure!(steps <= 2000, "{steps} steps");
    ensure!(
        final_ndcg >= 0.95,
        "training nDCG@10 {final_ndcg:.4} after {steps} steps"
    );
    ensure!(took < Duration::from_secs(600), "took {took:.1?}");
    Ok(format!(
        "baseline {baseline:.4}, nDCG@10 {final_ndcg:.4} after {steps} steps in {took:.1?}"
    ))
}

fn ordering_stability(trained: &Option<(Model, SyntheticCorpus)>) -> Outcome {
    let Some((model, corpus)) = trained else {
        return Err("no trained model".into());
    };
    let mut scores = Vec::new();
    for ordering in [Ordering::Descending, Ordering::Ascending, Ordering::Random(17)] {
        scores.push(ok(mean_ndcg_at_10(model, &corpus.records, &corpus.qrels, ordering))?);
    }
    let spread = scores.iter().cloned().fold(f64::MIN, f64::max) - scores.iter().cloned().fold(f64::MAX, f64::min);
    ensure!(spread <= 0.05, "D/A/R nDCG@10 {scores:.4?} spread {spread:.4}");
    Ok(format!(
        "D {:.4} A {:.4} R {:.4}, spread {spread:.4}",
        scores[0], scores[1], scores[2]
    ))
}

fn random_request(rng: &mut ChaCha8Rng, corpus: &SyntheticCorpus) -> RerankRequest {
    let record = corpus.records.choose(rng).unwrap();
    let mut docs: Vec<Document> = corpus.records.iter().flat_map(|r| r.docs.iter().cloned()).collect();
    docs.shuffle(rng);
    docs.truncate(rng.random_range(1..12));
    let ordering = match rng.random_range(0..4) {
        0 => Ordering::AsGiven,
        1 => Ordering::Descending,
        2 => Ordering::Ascending,
        _ => Ordering::Random(rng.random()),
    };
    RerankRequest {
        ordering,
        ..RerankRequest::new(record.query_text.clone(), docs)
    }
}

fn lora_zero_init() -> Outcome {
    let corpus = ok(generate_synthetic_corpus(&SynthConfig {
        seed: 4,
        ..Default::default()
    }))?;
    let base = toy_model(corpus_vocab(&corpus, 16), 2)?;
    let adapted = ok(base.clone().with_fresh_adapters(16, 32.0, 8))?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let options = RerankOptions::default();
    for i in 0..100 {
        let request = random_request(&mut rng, &corpus);
        let a = ok(rerank(&base, &request, &options))?;
        let b = ok(rerank(&adapted, &request, &options))?;
        let bitwise = a.docs.len() == b.docs.len()
            && a.docs
                .iter()
                .zip(&b.docs)
                .all(|(x, y)| x.doc_id == y.doc_id && x.score.to_bits() == y.score.to_bits());
        ensure!(bitwise, "request {i}: adapted output differs from base");
    }
    Ok("100 requests, ids and scores bit-identical".into())
}

/// `W + (α/r)·B·A` by explicit scalar loops.
fn fold_oracle(model: &Model) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = model
        .weights
        .iter()
        .map(|(n, t)| (n.to_string(), t.data().to_vec()))
        .collect();
    if let Some(set) = &model.adapters {
        for (target, ad) in set.iter() {
            let w = out.get_mut(target).unwrap();
            let (m, r, n) = (ad.b.shape()[0], ad.rank, ad.a.shape()[1]);
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for t in 0..r {
                        acc += ad.b.data()[i * r + t] * ad.a.data()[t * n + j];
                    }
                    w[i * n + j] += ad.alpha / r as f64 * acc;
                }
            }
        }
    }
    out
}

fn merge_correctness() -> Outcome {
    let corpus = ok(generate_synthetic_corpus(&SynthConfig::default()))?;
    let vocab = corpus_vocab(&corpus, 16);
    let a = toy_model(vocab.clone(), 21)?;
    let mut b = ok(toy_model(vocab, 22)?.with_fresh_adapters(4, 8.0, 3))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (_, ad) in b.adapters.as_mut().unwrap().iter_mut() {
        ad.b.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.05..0.05));
    }
    let merged = ok(merge_models(&[(&a, 0.25), (&b, 0.65)]))?;
    ensure!(merged.adapters.is_none(), "merged model still carries adapters");
    let (oa, ob) = (fold_oracle(&a), fold_oracle(&b));
    let mut worst = 0.0f64;
    let mut names = 0;
    for (name, t) in merged.weights.iter() {
        let (xa, xb) = (&oa[name], &ob[name]);
        ensure!(t.data().len() == xa.len(), "{name}: size changed");
        for i in 0..xa.len() {
            let expected = (0.25 * xa[i] + 0.65 * xb[i]) / 0.90;
            worst = worst.max((t.data()[i] - expected).abs());
        }
        names += 1;
    }
    ensure!(
        names == oa.len(),
        "merged model has {names} tensors, expected {}",
        oa.len()
    );
    ensure!(worst <= 1e-12, "worst deviation from the scalar oracle {worst:.3e}");

    let single = ok(merge_models(&[(&a, 1.0)]))?;
    ensure!(
        single.to_bytes() == a.to_bytes(),
        "single-model merge is not byte-identical"
    );
    let dir = ok(tempfile::tempdir())?;
    let path = dir.path().join("a.ckpt");
    ok(a.save(&path))?;
    let from_disk = ok(merge_checkpoints(std::slice::from_ref(&path), &[1.0]))?;
    let out = dir.path().join("merged.ckpt");
    ok(from_disk.save(&out))?;
    ensure!(
        ok(std::fs::read(&out))? == ok(std::fs::read(&path))?,
        "single-checkpoint merge file is not byte-identical"
    );
    Ok(format!(
        "{names} tensors within {worst:.1e} of the oracle; single merge byte-identical"
    ))
}

fn for_each_permutation(items: &mut Vec<u32>, k: usize, visit: &mut impl FnMut(&[u32])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        for_each_permutation(items, k + 1, visit);
        items.swap(k, i);
    }
}

fn reference_ndcg(ranking: &[String], judgments: &Judgments, k: usize) -> f64 {
    let dcg_of = |rels: &mut dyn Iterator<Item = u32>| -> f64 {
        rels.take(k)
            .enumerate()
            .map(|(i, r)| (2f64.powi(r as i32) - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let mut judged: Vec<u32> = judgments.values().copied().collect();
    let mut idcg = 0.0f64;
    for_each_permutation(&mut judged, 0, &mut |p| idcg = idcg.max(dcg_of(&mut p.iter().copied())));
    if idcg == 0.0 {
        return 0.0;
    }
    dcg_of(&mut ranking.iter().map(|d| judgments.get(d).copied().unwrap_or(0))) / idcg
}

fn reference_recall(ranking: &[String], judgments: &Judgments, k: usize) -> f64 {
    let relevant: BTreeSet<&String> = judgments.iter().filter(|(_, &r)| r > 0).map(|(d, _)| d).collect();
    if relevant.is_empty() {
        return 0.0;
    }
    let top: BTreeSet<&String> = ranking.iter().take(k).collect();
    top.intersection(&relevant).count() as f64 / relevant.len() as f64
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_ndcg, mut worst_recall) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let pool: Vec<String> = (0..rng.random_range(1..16)).map(|i| format!("d{i}")).collect();
        let mut judged = pool.clone();
        judged.shuffle(&mut rng);
        judged.truncate(rng.random_range(1..=pool.len().min(7)));
        let judgments: Judgments = judged.into_iter().map(|d| (d, rng.random_range(0..4))).collect();
        let mut ranking = pool.clone();
        ranking.shuffle(&mut rng);
        ranking.truncate(rng.random_range(1..=pool.len()));
        let n = ok(ndcg_at_k(&ranking, &judgments, 10, Gain::Exponential))?.value;
        let r = ok(recall_at_k(&ranking, &judgments, 10))?.value;
        worst_ndcg = worst_ndcg.max((n - reference_ndcg(&ranking, &judgments, 10)).abs());
        worst_recall = worst_recall.max((r - reference_recall(&ranking, &judgments, 10)).abs());
    }
    ensure!(
        worst_ndcg <= 1e-12,
        "nDCG@10 deviates from the exhaustive reference by {worst_ndcg:.3e}"
    );
    ensure!(
        worst_recall <= 1e-12,
        "Recall@10 deviates from the reference by {worst_recall:.3e}"
    );

    let judgments: Judgments = [("b".to_string(), 1)].into_iter().collect();
    let hand = ok(ndcg_at_k(&["a", "b", "c"], &judgments, 10, Gain::Exponential))?.value;
    ensure!(hand == 1.0 / 3f64.log2(), "hand case gave {hand:.17}");
    Ok(format!(
        "1000 fixtures, worst nDCG {worst_ndcg:.1e} recall {worst_recall:.1e}; hand case {hand:.6} exact"
    ))
}

fn batched_rerank() -> Outcome {
    let corpus = ok(generate_synthetic_corpus(&SynthConfig::default()))?;
    let model = toy_model(corpus_vocab(&corpus, 64), 6)?;
    let docs: Vec<Document> = corpus
        .records
        .iter()
        .flat_map(|r| r.docs.iter().cloned())
        .take(150)
        .collect();
    let request = RerankRequest::new(corpus.records[0].query_text.clone(), docs);
    let options = RerankOptions {
        max_docs_per_pass: 64,
        ..Default::default()
    };
    let first = ok(rerank(&model, &request, &options))?;
    let ids: HashSet<&str> = first.doc_ids().into_iter().collect();
    ensure!(
        first.docs.len() == 150 && ids.len() == 150,
        "{} results, {} unique",
        first.docs.len(),
        ids.len()
    );
    let mut sizes = vec![0usize; first.batches];
    first.docs.iter().for_each(|d| sizes[d.batch] += 1);
    ensure!(sizes == [64, 64, 22], "pass sizes {sizes:?}");
    let again = ok(rerank(&model, &request, &options))?;
    ensure!(again == first, "second run differs");

    // Each pass reranked alone, then pooled.
    let (presented, _) = ok(apply_ordering(&request.documents, request.ordering))?;
    let unbounded = RerankOptions {
        max_docs_per_pass: usize::MAX,
        ..Default::default()
    };
    let mut pooled = Vec::new();
    for chunk in presented.chunks(64) {
        let part = ok(rerank(
            &model,
            &RerankRequest::new(request.query.clone(), chunk.to_vec()),
            &unbounded,
        ))?;
        ensure!(part.batches == 1, "a 64-document chunk needed {} passes", part.batches);
        pooled.extend(part.docs.into_iter().map(|d| (d.doc_id, d.score)));
    }
    pooled.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let composed = first
        .docs
        .iter()
        .zip(&pooled)
        .all(|(d, (id, s))| &d.doc_id == id && d.score.to_bits() == s.to_bits());
    ensure!(composed, "batched ranking differs from composing single passes");

    let small = RerankRequest::new(request.query.clone(), request.documents[..40].to_vec());
    let capped = ok(rerank(&model, &small, &options))?;
    let single = ok(rerank(&model, &small, &unbounded))?;
    ensure!(
        capped.batches == 1 && capped == single,
        "a request that fits one pass differs from the single pass"
    );
    Ok("150 unique ids, passes [64, 64, 22], deterministic, equal to single-pass composition".into())
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL {name}: {why}");
            false
        }
    }
}

fn main() {
    let mut trained = None;
    let results = [
        run("1 gradient suite", gradient_suite),
        run("2 closed-form losses", closed_form_losses),
        run("3 loss composition", loss_composition),
        run("4 prompt template", template_fidelity),
        run("5 causality", causality),
        run("6 overfit", || overfit(&mut trained)),
        run("7 ordering stability", || ordering_stability(&trained)),
        run("8 adapter zero-init", lora_zero_init),
        run("9 merge", merge_correctness),
        run("10 metrics", metric_oracle),
        run("11 batched rerank", batched_rerank),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
