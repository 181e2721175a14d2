//! Ranking metrics, TREC file exchange, reports and the synthetic corpus.

mod metrics;
mod synth;
mod trec;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metrics::{ndcg_at_k, recall_at_k, Gain, Judgments, QueryFlag, Scored};
pub use synth::{generate_synthetic_corpus, SynthConfig, SyntheticCorpus};
pub use trec::{Qrels, Run, RunEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ndcg,
    Recall,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Self::Ndcg),
            "recall" => Ok(Self::Recall),
            _ => Err(Error::Validation(format!("unknown metric `{s}` (ndcg, recall)"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Ndcg => "ndcg",
            Metric::Recall => "recall",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: Metric,
    pub k: usize,
    pub per_query: BTreeMap<String, f64>,
    /// Mean over every query in the run.
    pub mean: f64,
    /// Mean over queries with at least one relevant judgment.
    pub judged_mean: f64,
    pub flags: BTreeMap<String, QueryFlag>,
    pub warnings: Vec<String>,
    pub variant: Option<String>,
    pub seed: Option<u64>,
}

impl MetricReport {
    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "metric={}@{}", self.metric, self.k);
        if let Some(v) = &self.variant {
            let _ = writeln!(s, "variant={v}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed={seed}");
        }
        let _ = writeln!(s, "queries={}", self.per_query.len());
        let _ = writeln!(s, "mean={}", self.mean);
        let _ = writeln!(s, "judged_mean={}", self.judged_mean);
        for w in &self.warnings {
            let _ = writeln!(s, "warning={w}");
        }
        for (q, v) in &self.per_query {
            match self.flags.get(q) {
                Some(f) => {
                    let _ = writeln!(s, "query.{q}={v} flag={f}");
                }
                None => {
                    let _ = writeln!(s, "query.{q}={v}");
                }
            }
        }
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores ranked doc id lists per query against `qrels`.
pub fn evaluate_rankings<S: AsRef<str>>(
    rankings: &BTreeMap<String, Vec<S>>,
    qrels: &Qrels,
    metric: Metric,
    k: usize,
) -> Result<MetricReport> {
    let empty = Judgments::new();
    let mut per_query = BTreeMap::new();
    let mut flags = BTreeMap::new();
    for (q, ranking) in rankings {
        let judgments = qrels.get(q);
        let scored = match metric {
            Metric::Ndcg => ndcg_at_k(ranking, judgments.unwrap_or(&empty), k, Gain::Exponential)?,
            Metric::Recall => recall_at_k(ranking, judgments.unwrap_or(&empty), k)?,
        };
        per_query.insert(q.clone(), scored.value);
        let flag = if judgments.is_none() {
            Some(QueryFlag::Unjudged)
        } else {
            scored.flag
        };
        if let Some(f) = flag {
            flags.insert(q.clone(), f);
        }
    }
    let mut warnings = Vec::new();
    if rankings.is_empty() {
        warnings.push("run contains no queries".to_string());
    }
    let unjudged = flags.values().filter(|&&f| f == QueryFlag::Unjudged).count();
    if unjudged > 0 {
        warnings.push(format!("{unjudged} run queries have no judgments"));
    }
    let judged_mean = mean(
        per_query
            .iter()
            .filter(|(q, _)| !matches!(flags.get(*q), Some(QueryFlag::NoRelevant | QueryFlag::Unjudged)))
            .map(|(_, v)| *v),
    );
    Ok(MetricReport {
        metric,
        k,
        mean: mean(per_query.values().copied()),
        judged_mean,
        per_query,
        flags,
        warnings,
        variant: None,
        seed: None,
    })
}

pub fn evaluate_run(run: &Run, qrels: &Qrels, metric: Metric, k: usize) -> Result<MetricReport> {
    let rankings: BTreeMap<String, Vec<&str>> = run.queries.keys().map(|q| (q.clone(), run.ranking(q))).collect();
    evaluate_rankings(&rankings, qrels, metric, k)
}
