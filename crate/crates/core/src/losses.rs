//! Contrastive training objective over cosine similarities.
//!
//! Every component is written once against tape nodes; the `*_value`
//! helpers evaluate the same graph on plain vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};

/// Embeddings for one query. `E` is either a plain vector or a tape node.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup<E> {
    /// Taken at the trailing query marker.
    pub query: E,
    /// Taken at the leading query marker.
    pub dual_query: Option<E>,
    pub positive: E,
    pub negatives: Vec<E>,
    /// Embedding of an augmented copy of the positive.
    pub augmented: Option<E>,
    /// Positives of other queries; extra negatives for the query-side losses.
    pub inbatch_negatives: Vec<E>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch<E> {
    pub groups: Vec<QueryGroup<E>>,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub disperse: f64,
    pub dual: f64,
    pub similar: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            disperse: 0.45,
            dual: 0.85,
            similar: 0.85,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.disperse, self.dual, self.similar]
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rank: f64,
    pub disperse: f64,
    pub dual: f64,
    pub similar: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub rank: Var,
    pub disperse: Option<Var>,
    pub dual: Option<Var>,
    pub similar: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        LossBreakdown {
            rank: tape.scalar(self.rank),
            disperse: get(self.disperse),
            dual: get(self.dual),
            similar: get(self.similar),
            total: tape.scalar(self.total),
        }
    }
}

fn check(batch: &TrainingBatch<Var>) -> Result<()> {
    if !(batch.temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {}",
            batch.temperature
        )));
    }
    if batch.groups.is_empty() {
        return Err(Error::Validation("training batch has no queries".into()));
    }
    if batch.groups.iter().any(|g| g.negatives.is_empty()) {
        return Err(Error::Validation("every query needs at least one negative".into()));
    }
    Ok(())
}

/// `−log(e^{a/τ} / Σ_j e^{s_j/τ})` where `a` is the first similarity.
fn info_nce(tape: &mut Tape, sims: &[Var], tau: f64) -> Result<Var> {
    let stacked = tape.stack(sims)?;
    let logits = tape.scale(stacked, 1.0 / tau);
    let lse = tape.log_sum_exp(logits);
    let anchor = tape.scale(sims[0], 1.0 / tau);
    tape.sub(lse, anchor)
}

fn mean_of(tape: &mut Tape, per_query: &[Var]) -> Result<Var> {
    let stacked = tape.stack(per_query)?;
    Ok(tape.mean(stacked))
}

fn query_side(
    tape: &mut Tape,
    batch: &TrainingBatch<Var>,
    pick: impl Fn(&QueryGroup<Var>) -> Option<Var>,
) -> Result<Var> {
    check(batch)?;
    let mut per_query = Vec::with_capacity(batch.groups.len());
    for g in &batch.groups {
        let q = pick(g).ok_or_else(|| Error::Validation("dual query embedding missing".into()))?;
        let mut sims = vec![tape.cosine(q, g.positive)?];
        for &d in g.negatives.iter().chain(&g.inbatch_negatives) {
            sims.push(tape.cosine(q, d)?);
        }
        per_query.push(info_nce(tape, &sims, batch.temperature)?);
    }
    mean_of(tape, &per_query)
}

pub fn rank_loss(tape: &mut Tape, batch: &TrainingBatch<Var>) -> Result<Var> {
    query_side(tape, batch, |g| Some(g.query))
}

pub fn dual_loss(tape: &mut Tape, batch: &TrainingBatch<Var>) -> Result<Var> {
    query_side(tape, batch, |g| g.dual_query)
}

/// Per query `log[(1/K) Σ_k (e^{s(d⁺,d_k)/τ} + Σ_{j>k} e^{s(d_k,d_j)/τ})]`,
/// averaged over queries.
pub fn disperse_loss(tape: &mut Tape, batch: &TrainingBatch<Var>) -> Result<Var> {
    check(batch)?;
    let mut per_query = Vec::with_capacity(batch.groups.len());
    for g in &batch.groups {
        let k = g.negatives.len();
        let mut sims = Vec::with_capacity(k + k * (k - 1) / 2);
        for (i, &neg) in g.negatives.iter().enumerate() {
            sims.push(tape.cosine(g.positive, neg)?);
            for &other in &g.negatives[i + 1..] {
                sims.push(tape.cosine(neg, other)?);
            }
        }
        let stacked = tape.stack(&sims)?;
        let logits = tape.scale(stacked, 1.0 / batch.temperature);
        let lse = tape.log_sum_exp(logits);
        let norm = tape.constant(Tensor::scalar((k as f64).ln()));
        per_query.push(tape.sub(lse, norm)?);
    }
    mean_of(tape, &per_query)
}

/// InfoNCE with anchor `d⁺`, positive `d*` and the query's negatives.
pub fn similar_loss(tape: &mut Tape, batch: &TrainingBatch<Var>) -> Result<Var> {
    check(batch)?;
    let mut per_query = Vec::with_capacity(batch.groups.len());
    for g in &batch.groups {
        let aug = g
            .augmented
            .ok_or_else(|| Error::Validation("augmented positive embedding missing".into()))?;
        let mut sims = vec![tape.cosine(g.positive, aug)?];
        for &d in &g.negatives {
            sims.push(tape.cosine(g.positive, d)?);
        }
        per_query.push(info_nce(tape, &sims, batch.temperature)?);
    }
    mean_of(tape, &per_query)
}

/// `rank + w_disperse·disperse + w_dual·dual + w_similar·similar`. A
/// component with zero weight is not evaluated.
pub fn total_loss(tape: &mut Tape, batch: &TrainingBatch<Var>, weights: &LossWeights) -> Result<LossVars> {
    weights.validate()?;
    let rank = rank_loss(tape, batch)?;
    let mut total = rank;
    let mut term =
        |tape: &mut Tape, w: f64, f: fn(&mut Tape, &TrainingBatch<Var>) -> Result<Var>| -> Result<Option<Var>> {
            if w == 0.0 {
                return Ok(None);
            }
            let v = f(tape, batch)?;
            let scaled = tape.scale(v, w);
            total = tape.add(total, scaled)?;
            Ok(Some(v))
        };
    let disperse = term(tape, weights.disperse, disperse_loss)?;
    let dual = term(tape, weights.dual, dual_loss)?;
    let similar = term(tape, weights.similar, similar_loss)?;
    Ok(LossVars {
        rank,
        disperse,
        dual,
        similar,
        total,
    })
}

impl TrainingBatch<Vec<f64>> {
    /// Registers every embedding on `tape`; `differentiable` makes them
    /// gradient-carrying leaves.
    pub fn bind(&self, tape: &mut Tape, differentiable: bool) -> Result<TrainingBatch<Var>> {
        let mut leaf = |v: &Vec<f64>| -> Result<Var> {
            let t = Tensor::vector(v.clone())?;
            Ok(if differentiable {
                tape.param(t)
            } else {
                tape.constant(t)
            })
        };
        let mut groups = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            groups.push(QueryGroup {
                query: leaf(&g.query)?,
                dual_query: g.dual_query.as_ref().map(&mut leaf).transpose()?,
                positive: leaf(&g.positive)?,
                negatives: g.negatives.iter().map(&mut leaf).collect::<Result<_>>()?,
                augmented: g.augmented.as_ref().map(&mut leaf).transpose()?,
                inbatch_negatives: g.inbatch_negatives.iter().map(&mut leaf).collect::<Result<_>>()?,
            });
        }
        Ok(TrainingBatch {
            groups,
            temperature: self.temperature,
        })
    }

    pub fn evaluate(&self, weights: &LossWeights) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        Ok(total_loss(&mut tape, &bound, weights)?.values(&tape))
    }
}

fn component_value(
    batch: &TrainingBatch<Vec<f64>>,
    f: fn(&mut Tape, &TrainingBatch<Var>) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = batch.bind(&mut tape, false)?;
    let v = f(&mut tape, &bound)?;
    Ok(tape.scalar(v))
}

pub fn rank_loss_value(batch: &TrainingBatch<Vec<f64>>) -> Result<f64> {
    component_value(batch, rank_loss)
}

pub fn disperse_loss_value(batch: &TrainingBatch<Vec<f64>>) -> Result<f64> {
    component_value(batch, disperse_loss)
}

pub fn dual_loss_value(batch: &TrainingBatch<Vec<f64>>) -> Result<f64> {
    component_value(batch, dual_loss)
}

pub fn similar_loss_value(batch: &TrainingBatch<Vec<f64>>) -> Result<f64> {
    component_value(batch, similar_loss)
}
