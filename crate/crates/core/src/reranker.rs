//! Listwise inference: candidates share one causal context per pass and are
//! scored by cosine between the query and document marker embeddings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ndcg_at_k, Gain, Judgments, Run, RunEntry};
use crate::head::score;
use crate::model::Model;
use crate::prompt::{
    apply_ordering, build_prompt, chunk_into_batches, Ordering, PromptOptions, RequestRecord, RerankRequest,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOptions {
    pub max_docs_per_pass: usize,
    pub max_doc_tokens: Option<usize>,
    pub max_query_tokens: Option<usize>,
    /// Score every pass against the query embedding of the first pass.
    pub pin_first_query_embedding: bool,
}

impl Default for RerankOptions {
    fn default() -> Self {
        Self {
            max_docs_per_pass: 64,
            max_doc_tokens: None,
            max_query_tokens: None,
            pin_first_query_embedding: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
    /// Index of the pass that scored this document.
    pub batch: usize,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub docs: Vec<RankedDoc>,
    pub ordering: Ordering,
    pub batches: usize,
}

impl RankedResult {
    pub fn doc_ids(&self) -> Vec<&str> {
        self.docs.iter().map(|d| d.doc_id.as_str()).collect()
    }
}

fn prompt_options(model: &Model, options: &RerankOptions) -> PromptOptions {
    PromptOptions {
        max_doc_tokens: options.max_doc_tokens,
        max_query_tokens: options.max_query_tokens,
        dual_query_marker: false,
        pad_documents: false,
        max_context: model.config.backbone.max_context,
    }
}

/// Ranks every document of `request`. Passes are packed from the
/// presentation order; scores from all passes are pooled and sorted by
/// descending score, ties by ascending doc id. A document whose embedding
/// degenerates scores −1 and is ranked last with a diagnostic.
pub fn rerank(model: &Model, request: &RerankRequest, options: &RerankOptions) -> Result<RankedResult> {
    request.validate()?;
    let (presented, _) = apply_ordering(&request.documents, request.ordering)?;
    let popts = prompt_options(model, options);
    let batches = chunk_into_batches(
        &model.vocab,
        &request.query,
        &presented,
        options.max_docs_per_pass,
        &popts,
    )?;

    let mut pinned: Option<Vec<f64>> = None;
    let mut scored: Vec<(bool, RankedDoc)> = Vec::with_capacity(request.documents.len());
    for (b, batch) in batches.iter().enumerate() {
        let layout = build_prompt(&model.vocab, batch, &popts)?;
        let emb = model.embed(&layout)?;
        let query = match (&pinned, options.pin_first_query_embedding) {
            (Some(q), true) => q.clone(),
            _ => emb.query.clone(),
        };
        if pinned.is_none() {
            pinned = Some(emb.query.clone());
        }
        for (doc, d) in batch.documents.iter().zip(&emb.docs) {
            let (degenerate, score, diagnostic) = match score(&query, d) {
                Ok(s) => (false, s, None),
                Err(e @ Error::DegenerateEmbedding(_)) => (true, -1.0, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            scored.push((
                degenerate,
                RankedDoc {
                    doc_id: doc.id.clone(),
                    score,
                    rank: 0,
                    batch: b,
                    diagnostic,
                },
            ));
        }
    }
    scored.sort_by(|(da, a), (db, b)| {
        da.cmp(db)
            .then(b.score.total_cmp(&a.score))
            .then(a.doc_id.cmp(&b.doc_id))
    });
    let docs = scored
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut d))| {
            d.rank = i + 1;
            d
        })
        .collect();
    Ok(RankedResult {
        docs,
        ordering: request.ordering,
        batches: batches.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    pub ordering: Ordering,
    pub result: RankedResult,
    pub ndcg_at_10: Option<f64>,
}

/// Reranks once per presentation order; with judgments, each outcome
/// carries its nDCG@10.
pub fn rerank_ordered_variants(
    model: &Model,
    request: &RerankRequest,
    variants: &[Ordering],
    options: &RerankOptions,
    judgments: Option<&Judgments>,
) -> Result<Vec<VariantOutcome>> {
    variants
        .iter()
        .map(|&ordering| {
            let req = RerankRequest {
                ordering,
                ..request.clone()
            };
            let result = rerank(model, &req, options)?;
            let ndcg_at_10 = judgments
                .map(|j| ndcg_at_k(&result.doc_ids(), j, 10, Gain::Exponential).map(|s| s.value))
                .transpose()?;
            Ok(VariantOutcome {
                ordering,
                result,
                ndcg_at_10,
            })
        })
        .collect()
}

/// Reranks every record and collects a TREC run.
pub fn rerank_records(
    model: &Model,
    records: &[RequestRecord],
    ordering: Ordering,
    options: &RerankOptions,
    tag: &str,
) -> Result<Run> {
    let mut run = Run::new(tag);
    for r in records {
        let result = rerank(model, &r.to_request(ordering), options)?;
        run.queries.insert(
            r.query_id.clone(),
            result
                .docs
                .into_iter()
                .map(|d| RunEntry {
                    doc_id: d.doc_id,
                    rank: d.rank,
                    score: d.score,
                })
                .collect(),
        );
    }
    Ok(run)
}

/// Ranked doc ids per query id, ready for metric evaluation.
pub fn rankings_of(run: &Run) -> BTreeMap<String, Vec<String>> {
    run.queries
        .keys()
        .map(|q| (q.clone(), run.ranking(q).into_iter().map(str::to_string).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_model;
    use crate::prompt::Document;

    fn request(n: usize) -> RerankRequest {
        let words = ["red", "green", "blue", "apple", "pear", "plum"];
        let docs = (0..n)
            .map(|i| {
                let text = format!("{} {} {}", words[i % 6], words[(i / 6) % 6], words[(i * 7 + 1) % 6]);
                Document::new(format!("doc{i:03}"), text).with_score(((i * 37) % 101) as f64)
            })
            .collect();
        RerankRequest::new("green apple", docs)
    }

    #[test]
    fn single_document() {
        let m = tiny_model(1);
        let r = rerank(&m, &request(1), &RerankOptions::default()).unwrap();
        assert_eq!(r.docs.len(), 1);
        assert_eq!(r.docs[0].rank, 1);
        assert!(r.docs[0].score.abs() <= 1.0);
    }

    #[test]
    fn single_pass_equals_hand_composition() {
        let m = tiny_model(2);
        let req = request(6);
        let r = rerank(&m, &req, &RerankOptions::default()).unwrap();
        let layout = build_prompt(&m.vocab, &req, &PromptOptions::default()).unwrap();
        let emb = m.embed(&layout).unwrap();
        for d in &r.docs {
            let idx = req.documents.iter().position(|x| x.id == d.doc_id).unwrap();
            assert_eq!(d.score, score(&emb.query, &emb.docs[idx]).unwrap());
            assert_eq!(d.batch, 0);
        }
        for w in r.docs.windows(2) {
            assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id));
        }
    }

    #[test]
    fn many_documents_split_into_passes() {
        let m = tiny_model(3);
        let req = request(150);
        let opts = RerankOptions::default();
        let r = rerank(&m, &req, &opts).unwrap();
        assert_eq!(r.batches, 3);
        let mut ids: Vec<&str> = r.doc_ids();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 150);
        assert!(r.docs.iter().all(|d| d.batch <= 2));
        assert_eq!(r, rerank(&m, &req, &opts).unwrap());
        let ranks: Vec<usize> = r.docs.iter().map(|d| d.rank).collect();
        assert_eq!(ranks, (1..=150).collect::<Vec<_>>());
    }

    #[test]
    fn pinned_query_changes_only_later_passes() {
        let m = tiny_model(4);
        let req = request(10);
        let free = RerankOptions {
            max_docs_per_pass: 4,
            ..Default::default()
        };
        let pinned = RerankOptions {
            pin_first_query_embedding: true,
            ..free.clone()
        };
        let a = rerank(&m, &req, &free).unwrap();
        let b = rerank(&m, &req, &pinned).unwrap();
        let by_id = |r: &RankedResult| -> BTreeMap<String, (f64, usize)> {
            r.docs.iter().map(|d| (d.doc_id.clone(), (d.score, d.batch))).collect()
        };
        let (ma, mb) = (by_id(&a), by_id(&b));
        for (id, (s, batch)) in &ma {
            if *batch == 0 {
                assert_eq!(*s, mb[id].0);
            }
        }
        assert_ne!(ma, mb);
    }

    #[test]
    fn ordering_variants_cover_the_same_ids() {
        let m = tiny_model(5);
        let req = request(12);
        let variants = [Ordering::Descending, Ordering::Ascending, Ordering::Random(7)];
        let out = rerank_ordered_variants(&m, &req, &variants, &RerankOptions::default(), None).unwrap();
        let sets: Vec<Vec<&str>> = out
            .iter()
            .map(|o| {
                let mut ids = o.result.doc_ids();
                ids.sort();
                ids
            })
            .collect();
        assert!(sets.windows(2).all(|w| w[0] == w[1]));
        let again = rerank_ordered_variants(&m, &req, &variants[2..], &RerankOptions::default(), None).unwrap();
        assert_eq!(again[0].result, out[2].result);
    }

    #[test]
    fn zero_projector_ranks_all_last_with_diagnostics() {
        let mut m = tiny_model(6);
        for name in [crate::head::W2, crate::head::B2] {
            m.weights
                .get_mut(name)
                .unwrap()
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let r = rerank(&m, &request(3), &RerankOptions::default()).unwrap();
        assert!(r.docs.iter().all(|d| d.diagnostic.is_some() && d.score == -1.0));
        assert_eq!(r.doc_ids(), vec!["doc000", "doc001", "doc002"]);
    }
}
