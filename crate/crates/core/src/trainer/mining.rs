//! Hard-negative mining: several retrievers each propose their top-scoring
//! non-relevant passages and the pools are interleaved.

use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::prompt::Document;

use super::data::TrainingExample;

pub trait Scorer {
    fn name(&self) -> &str;
    fn score(&self, query: &str, doc: &Document) -> f64;
}

/// Fraction of distinct query words present in the document.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl Scorer for LexicalScorer {
    fn name(&self) -> &str {
        "lexical"
    }

    fn score(&self, query: &str, doc: &Document) -> f64 {
        let q: BTreeSet<String> = query.split_whitespace().map(str::to_lowercase).collect();
        if q.is_empty() {
            return 0.0;
        }
        let d: HashSet<String> = doc.text.split_whitespace().map(str::to_lowercase).collect();
        q.iter().filter(|w| d.contains(*w)).count() as f64 / q.len() as f64
    }
}

/// Cosine between seeded hashed bag-of-words vectors; a stand-in for a
/// dense retriever.
#[derive(Debug, Clone, Copy)]
pub struct HashedScorer {
    pub seed: u64,
    pub dim: usize,
}

impl HashedScorer {
    fn embed(&self, text: &str) -> Vec<f64> {
        let dim = self.dim.max(1);
        let mut v = vec![0.0; dim];
        for w in text.split_whitespace() {
            let x = fnv1a(self.seed, &w.to_lowercase());
            let sign = if x >> 63 == 0 { 1.0 } else { -1.0 };
            v[(x % dim as u64) as usize] += sign;
        }
        v
    }
}

fn fnv1a(seed: u64, word: &str) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(word.as_bytes())
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| {
            (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
        })
}

impl Scorer for HashedScorer {
    fn name(&self) -> &str {
        "hashed"
    }

    fn score(&self, query: &str, doc: &Document) -> f64 {
        crate::numeric::cosine(&self.embed(query), &self.embed(&doc.text)).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningConfig {
    /// Candidates each scorer contributes.
    pub pool_size: usize,
    pub negatives_per_query: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            pool_size: 25,
            negatives_per_query: 25,
        }
    }
}

/// Query to mine for: id, text.
pub type MiningQuery = (String, String);

/// For every query, takes each scorer's top `pool_size` unjudged or
/// non-relevant documents (ties by doc id), interleaves the lists
/// round-robin, drops repeats and keeps `negatives_per_query`. Every
/// relevant document becomes the positive of its own example.
pub fn mine_hard_negatives(
    queries: &[MiningQuery],
    corpus: &[Document],
    qrels: &Qrels,
    scorers: &[&dyn Scorer],
    config: &MiningConfig,
) -> Result<Vec<TrainingExample>> {
    if corpus.is_empty() {
        return Err(Error::Data("corpus is empty".into()));
    }
    if scorers.is_empty() || config.pool_size == 0 || config.negatives_per_query == 0 {
        return Err(Error::Config("mining needs a scorer and positive pool sizes".into()));
    }
    let mut out = Vec::new();
    for (qid, text) in queries {
        let judged = qrels.get(qid);
        let relevant = |d: &Document| judged.and_then(|j| j.get(&d.id)).is_some_and(|&r| r > 0);
        let positives: Vec<&Document> = corpus.iter().filter(|d| relevant(d)).collect();
        if positives.is_empty() {
            continue;
        }
        let pools: Vec<Vec<&Document>> = scorers
            .iter()
            .map(|s| {
                let mut scored: Vec<(f64, &Document)> = corpus
                    .iter()
                    .filter(|d| !relevant(d))
                    .map(|d| (s.score(text, d), d))
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
                scored.into_iter().take(config.pool_size).map(|(_, d)| d).collect()
            })
            .collect();
        let mut seen = HashSet::new();
        let mut negatives = Vec::new();
        let depth = pools.iter().map(Vec::len).max().unwrap_or(0);
        'fill: for i in 0..depth {
            for pool in &pools {
                if let Some(d) = pool.get(i) {
                    if seen.insert(d.id.as_str()) {
                        negatives.push((*d).clone());
                        if negatives.len() == config.negatives_per_query {
                            break 'fill;
                        }
                    }
                }
            }
        }
        if negatives.is_empty() {
            return Err(Error::Data(format!("query `{qid}` has no candidate negatives")));
        }
        for p in positives {
            out.push(TrainingExample {
                query_id: qid.clone(),
                query: text.clone(),
                positive: p.clone(),
                negatives: negatives.clone(),
            });
        }
    }
    Ok(out)
}
