//! Listwise prompt assembly: tokenizer, template rendering, presentation
//! order and packing of long candidate lists into passes.

mod batching;
mod template;
mod vocab;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batching::chunk_into_batches;
pub use template::{build_prompt, scan_special, template_words, PromptLayout, PromptOptions};
pub use vocab::{Special, TokenKind, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "doc_id")]
    pub id: String,
    #[serde(rename = "doc_text")]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage_score: Option<f64>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            first_stage_score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.first_stage_score = Some(score);
        self
    }
}

/// Presentation order of candidates inside the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    #[default]
    AsGiven,
    Descending,
    Ascending,
    Random(u64),
}

impl std::str::FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "given" | "as-given" | "as_given" => Ok(Self::AsGiven),
            "desc" | "descending" | "d" => Ok(Self::Descending),
            "asc" | "ascending" | "a" => Ok(Self::Ascending),
            _ => match s.strip_prefix("random:").or_else(|| s.strip_prefix("r:")) {
                Some(seed) => seed
                    .parse()
                    .map(Self::Random)
                    .map_err(|_| Error::Validation(format!("bad random ordering seed `{seed}`"))),
                None => Err(Error::Validation(format!(
                    "unknown ordering `{s}` (given, desc, asc, random:<seed>)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRequest {
    pub query: String,
    pub documents: Vec<Document>,
    #[serde(default)]
    pub ordering: Ordering,
}

impl RerankRequest {
    pub fn new(query: impl Into<String>, documents: Vec<Document>) -> Self {
        Self {
            query: query.into(),
            documents,
            ordering: Ordering::AsGiven,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.query.trim().is_empty() {
            return Err(Error::Validation("query is empty".into()));
        }
        if self.documents.is_empty() {
            return Err(Error::Validation("request has no documents".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &self.documents {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Validation(format!("duplicate document id `{}`", d.id)));
            }
        }
        Ok(())
    }
}

/// One line of a request file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub query_id: String,
    pub query_text: String,
    pub docs: Vec<Document>,
}

impl RequestRecord {
    pub fn to_request(&self, ordering: Ordering) -> RerankRequest {
        RerankRequest {
            query: self.query_text.clone(),
            documents: self.docs.clone(),
            ordering,
        }
    }
}

/// Returns the documents in presentation order together with
/// `permutation[slot] = original index`.
pub fn apply_ordering(documents: &[Document], ordering: Ordering) -> Result<(Vec<Document>, Vec<usize>)> {
    let mut perm: Vec<usize> = (0..documents.len()).collect();
    match ordering {
        Ordering::AsGiven => {}
        Ordering::Random(seed) => perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        Ordering::Descending | Ordering::Ascending => {
            let scores = documents
                .iter()
                .map(|d| {
                    d.first_stage_score
                        .ok_or_else(|| Error::Validation(format!("document `{}` has no first-stage score", d.id)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if ordering == Ordering::Descending {
                perm.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            } else {
                perm.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
            }
        }
    }
    Ok((perm.iter().map(|&i| documents[i].clone()).collect(), perm))
}
