use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Graded judgments of one query, doc id → relevance.
pub type Judgments = BTreeMap<String, u32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `2^rel − 1`
    #[default]
    Exponential,
    /// `rel`
    Linear,
}

impl Gain {
    pub fn apply(self, rel: u32) -> f64 {
        match self {
            Gain::Exponential => 2f64.powi(rel as i32) - 1.0,
            Gain::Linear => rel as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFlag {
    NoRelevant,
    EmptyRanking,
    Unjudged,
}

impl std::fmt::Display for QueryFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QueryFlag::NoRelevant => "no_relevant",
            QueryFlag::EmptyRanking => "empty_ranking",
            QueryFlag::Unjudged => "unjudged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub value: f64,
    pub flag: Option<QueryFlag>,
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Validation("metric cutoff k must be at least 1".into()));
    }
    Ok(())
}

/// First occurrence of each doc id, in ranking order.
fn dedup<S: AsRef<str>>(ranking: &[S]) -> Vec<&str> {
    let mut seen = HashSet::new();
    ranking.iter().map(AsRef::as_ref).filter(|d| seen.insert(*d)).collect()
}

fn discount(position: usize) -> f64 {
    1.0 / ((position + 2) as f64).log2()
}

pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], judgments: &Judgments, k: usize, gain: Gain) -> Result<Scored> {
    check_k(k)?;
    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&r| r > 0).collect();
    if ideal.is_empty() {
        return Ok(Scored {
            value: 0.0,
            flag: Some(QueryFlag::NoRelevant),
        });
    }
    let ranking = dedup(ranking);
    if ranking.is_empty() {
        return Ok(Scored {
            value: 0.0,
            flag: Some(QueryFlag::EmptyRanking),
        });
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(p, &r)| gain.apply(r) * discount(p))
        .sum();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(p, d)| gain.apply(judgments.get(*d).copied().unwrap_or(0)) * discount(p))
        .sum();
    Ok(Scored {
        value: dcg / idcg,
        flag: None,
    })
}

pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], judgments: &Judgments, k: usize) -> Result<Scored> {
    check_k(k)?;
    let relevant = judgments.values().filter(|&&r| r > 0).count();
    if relevant == 0 {
        return Ok(Scored {
            value: 0.0,
            flag: Some(QueryFlag::NoRelevant),
        });
    }
    let ranking = dedup(ranking);
    if ranking.is_empty() {
        return Ok(Scored {
            value: 0.0,
            flag: Some(QueryFlag::EmptyRanking),
        });
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|d| judgments.get(**d).is_some_and(|&r| r > 0))
        .count();
    Ok(Scored {
        value: hits as f64 / relevant as f64,
        flag: None,
    })
}
