//! One training stage: listwise prompts, contrastive loss on marker
//! embeddings and AdamW updates of the trainable parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::config::{StageConfig, TrainMode};
use super::data::TrainingExample;
use super::optim::AdamW;
use crate::backbone::{self, EMBED};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, Metric, Qrels};
use crate::head::{self, is_projector_param};
use crate::losses::{total_loss, QueryGroup, TrainingBatch};
use crate::model::Model;
use crate::numeric::{Tape, Tensor, Var};
use crate::params::BoundParams;
use crate::prompt::{build_prompt, Document, Ordering, PromptOptions, RequestRecord, RerankRequest};
use crate::reranker::{rerank_records, RerankOptions};

/// Loss components after one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub rank: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disperse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similar: Option<f64>,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndcg_at_10: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Positive,
    Negative,
    Augmented,
}

fn is_trainable(config: &StageConfig, name: &str) -> bool {
    if name == EMBED {
        return config.tune_embeddings;
    }
    match config.mode {
        TrainMode::AdaptersOnly => name.contains(".lora_") || is_projector_param(name),
        TrainMode::Full => true,
        TrainMode::Merge => false,
    }
}

fn param_mut<'m>(model: &'m mut Model, name: &str) -> Result<&'m mut Tensor> {
    if let Some((target, factor)) = name.rsplit_once(".lora_") {
        let ad = model
            .adapters
            .as_mut()
            .and_then(|s| s.get_mut(target))
            .ok_or_else(|| Error::Config(format!("missing adapter `{target}`")))?;
        return Ok(if factor == "a" { &mut ad.a } else { &mut ad.b });
    }
    model.weights.get_mut(name)
}

/// Step-wise trainer. Owns a working copy of the model.
pub struct StageRunner<'a> {
    config: StageConfig,
    data: &'a [TrainingExample],
    model: Model,
    optimizer: AdamW,
    augment: AugmentConfig,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    trace: Vec<StepRecord>,
}

impl<'a> StageRunner<'a> {
    /// Adapter stages attach fresh adapters when the model has none and
    /// keep training existing ones otherwise; full stages fold adapters into
    /// the base weights first.
    pub fn new(model: Model, data: &'a [TrainingExample], config: StageConfig) -> Result<Self> {
        config.validate()?;
        let model = match config.mode {
            TrainMode::Merge => {
                return Err(Error::Config(
                    "a merge stage has nothing to train; merge checkpoints instead".into(),
                ))
            }
            TrainMode::Full => model.folded()?,
            TrainMode::AdaptersOnly if model.adapters.is_none() => {
                model.with_fresh_adapters(config.lora_rank, config.lora_alpha, config.seed ^ 0x5eed)?
            }
            TrainMode::AdaptersOnly => model,
        };
        if data.is_empty() {
            return Err(Error::Data("no training examples".into()));
        }
        if let Some(ex) = data.iter().find(|e| e.negatives.is_empty()) {
            return Err(Error::Data(format!("query `{}` has no negatives", ex.query_id)));
        }
        let optimizer = AdamW::new(
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.adam_eps,
            config.weight_decay,
        );
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            data,
            model,
            optimizer,
            augment: AugmentConfig::default(),
            order: Vec::new(),
            cursor: 0,
            step: 0,
            trace: Vec::new(),
        })
    }

    pub fn with_augment(mut self, augment: AugmentConfig) -> Self {
        self.augment = augment;
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn config(&self) -> &StageConfig {
        &self.config
    }

    fn prompt_options(&self) -> PromptOptions {
        PromptOptions {
            max_doc_tokens: Some(self.config.max_doc_tokens),
            max_query_tokens: self.config.max_query_tokens,
            dual_query_marker: self.config.w_dual > 0.0,
            pad_documents: self.config.pad_documents,
            max_context: self.config.max_seq_tokens.min(self.model.config.backbone.max_context),
        }
    }

    /// Next batch of example indices; examples are visited in a fresh
    /// seeded permutation every epoch.
    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.config.batch_size.min(self.data.len());
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order = (0..self.data.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let i = self.order[self.cursor];
            self.cursor += 1;
            if !out.contains(&i) {
                out.push(i);
            }
        }
        out
    }

    /// Listwise prompt for one example: positive, sampled negatives and the
    /// augmented positive in a shuffled presentation order.
    fn example_request(&mut self, ex: &TrainingExample) -> (RerankRequest, Vec<Role>) {
        let mut negs: Vec<&Document> = ex.negatives.iter().collect();
        negs.shuffle(&mut self.rng);
        negs.truncate(self.config.n_negatives);
        let mut docs: Vec<(Role, Document)> = vec![(Role::Positive, ex.positive.clone())];
        docs.extend(negs.into_iter().map(|d| (Role::Negative, d.clone())));
        if self.config.w_similar > 0.0 {
            let text = augment(&ex.positive.text, &self.augment, &mut self.rng);
            docs.push((Role::Augmented, Document::new(format!("{}#aug", ex.positive.id), text)));
        }
        docs.shuffle(&mut self.rng);
        let (roles, docs): (Vec<Role>, Vec<Document>) = docs.into_iter().unzip();
        (RerankRequest::new(ex.query.clone(), docs), roles)
    }

    /// Runs one optimizer step and returns its loss record.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.step + 1;
        let batch_idx = self.next_batch();
        let popts = self.prompt_options();
        let mut tape = Tape::new();
        let config = &self.config;
        let bound = BoundParams::bind(&mut tape, &self.model.weights, self.model.adapters.as_ref(), &|n| {
            is_trainable(config, n)
        });

        let mut groups: Vec<QueryGroup<Var>> = Vec::with_capacity(batch_idx.len());
        for &i in &batch_idx {
            let ex = &self.data[i];
            let (request, roles) = self.example_request(ex);
            let layout = build_prompt(&self.model.vocab, &request, &popts)?;
            let hidden = backbone::forward_on_tape(&mut tape, &self.model.config.backbone, &bound, &layout.token_ids)?;
            let rows = head::marker_rows(&layout, tape.value(hidden).rows())?;
            let picked = tape.gather(hidden, &rows)?;
            let proj = head::project_on_tape(&mut tape, &bound, picked)?;
            let query = tape.select_row(proj, 0)?;
            let dual_query = match layout.dual_query_marker_position {
                Some(_) => Some(tape.select_row(proj, 1)?),
                None => None,
            };
            let offset = 1 + usize::from(dual_query.is_some());
            let mut group = QueryGroup {
                query,
                dual_query,
                positive: query,
                negatives: Vec::new(),
                augmented: None,
                inbatch_negatives: Vec::new(),
            };
            for (r, role) in roles.iter().enumerate() {
                let v = tape.select_row(proj, offset + r)?;
                match role {
                    Role::Positive => group.positive = v,
                    Role::Negative => group.negatives.push(v),
                    Role::Augmented => group.augmented = Some(v),
                }
            }
            groups.push(group);
        }

        let positives: Vec<Var> = groups.iter().map(|g| g.positive).collect();
        for (g, group) in groups.iter_mut().enumerate() {
            let mut others: Vec<usize> = (0..positives.len()).filter(|&o| o != g).collect();
            others.shuffle(&mut self.rng);
            others.truncate(self.config.n_inbatch_negatives);
            group.inbatch_negatives = others.into_iter().map(|o| positives[o]).collect();
        }

        let batch = TrainingBatch {
            groups,
            temperature: self.config.temperature,
        };
        let loss = total_loss(&mut tape, &batch, &self.config.weights())?;
        let values = loss.values(&tape);
        if !values.total.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss is {}", values.total),
            });
        }
        tape.backward(loss.total)?;

        let updates: Vec<(String, Var)> = bound.trainable().to_vec();
        if let Some((name, _)) = updates
            .iter()
            .find(|(_, v)| tape.grad(*v).is_some_and(|g| g.iter().any(|x| !x.is_finite())))
        {
            return Err(Error::Divergence {
                step,
                detail: format!("non-finite gradient for `{name}`"),
            });
        }
        self.optimizer.begin_step();
        for (name, var) in &updates {
            let Some(grad) = tape.grad(*var) else { continue };
            let param = param_mut(&mut self.model, name)?;
            self.optimizer.update(name, param.data_mut(), grad);
        }

        self.step = step;
        let record = StepRecord {
            step,
            rank: values.rank,
            disperse: loss.disperse.map(|_| values.disperse),
            dual: loss.dual.map(|_| values.dual),
            similar: loss.similar.map(|_| values.similar),
            total: values.total,
            ndcg_at_10: None,
        };
        self.trace.push(record.clone());
        Ok(record)
    }
}

/// Mean nDCG@10 of reranking `records` with `model`.
pub fn mean_ndcg_at_10(model: &Model, records: &[RequestRecord], qrels: &Qrels, ordering: Ordering) -> Result<f64> {
    let run = rerank_records(model, records, ordering, &RerankOptions::default(), "eval")?;
    Ok(evaluate_run(&run, qrels, Metric::Ndcg, 10)?.mean)
}

/// Held-out or training queries scored during a stage.
pub struct Monitor<'m> {
    pub records: &'m [RequestRecord],
    pub qrels: &'m Qrels,
    pub ordering: Ordering,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub model: Model,
    pub trace: Vec<StepRecord>,
    pub steps: usize,
    pub reached_target: bool,
}

/// Runs `config.steps` optimizer steps. With a monitor and a positive
/// `eval_every`, nDCG@10 is recorded every `eval_every` steps and training
/// stops as soon as it reaches `target_ndcg`.
pub fn train_stage(
    model: Model,
    data: &[TrainingExample],
    config: &StageConfig,
    monitor: Option<&Monitor<'_>>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<StageOutcome> {
    if config.steps == 0 {
        config.validate()?;
        return Ok(StageOutcome {
            model,
            trace: Vec::new(),
            steps: 0,
            reached_target: false,
        });
    }
    let mut runner = StageRunner::new(model, data, config.clone())?;
    let mut reached_target = false;
    for s in 1..=config.steps {
        runner.step()?;
        if let (Some(m), true) = (monitor, config.eval_every > 0 && s % config.eval_every == 0) {
            let ndcg = mean_ndcg_at_10(runner.model(), m.records, m.qrels, m.ordering)?;
            runner.trace.last_mut().expect("step recorded").ndcg_at_10 = Some(ndcg);
            if config.target_ndcg.is_some_and(|t| ndcg >= t) {
                reached_target = true;
            }
        }
        on_step(runner.trace.last().expect("step recorded"));
        if reached_target {
            break;
        }
    }
    let steps = runner.steps_done();
    let trace = runner.trace.clone();
    Ok(StageOutcome {
        model: runner.into_model(),
        trace,
        steps,
        reached_target,
    })
}
