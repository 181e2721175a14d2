//! TREC qrels and run files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::metrics::Judgments;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    pub queries: BTreeMap<String, Judgments>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, rel: u32) -> Result<()> {
        let j = self.queries.entry(query_id.to_string()).or_default();
        if j.insert(doc_id.to_string(), rel).is_some() {
            return Err(Error::Validation(format!(
                "duplicate judgment for ({query_id}, {doc_id})"
            )));
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&Judgments> {
        self.queries.get(query_id)
    }

    /// `query_id 0 doc_id rel`, whitespace separated.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut q = Self::default();
        for (n, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            if cols.len() != 4 {
                return Err(Error::parse(
                    source_name,
                    n + 1,
                    format!("expected 4 columns, found {}", cols.len()),
                ));
            }
            let rel: u32 = cols[3].parse().map_err(|_| {
                Error::parse(
                    source_name,
                    n + 1,
                    format!("relevance `{}` is not a non-negative integer", cols[3]),
                )
            })?;
            q.insert(cols[0], cols[2], rel)
                .map_err(|e| Error::parse(source_name, n + 1, e.to_string()))?;
        }
        Ok(q)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_trec(&self) -> String {
        let mut s = String::new();
        for (q, j) in &self.queries {
            for (d, r) in j {
                let _ = writeln!(s, "{q} 0 {d} {r}");
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub tag: String,
    pub queries: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    /// Doc ids of one query by ascending rank, ties by descending score.
    pub fn ranking(&self, query_id: &str) -> Vec<&str> {
        let mut entries: Vec<&RunEntry> = self
            .queries
            .get(query_id)
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        entries.sort_by(|a, b| a.rank.cmp(&b.rank).then(b.score.total_cmp(&a.score)));
        entries.into_iter().map(|e| e.doc_id.as_str()).collect()
    }

    /// `query_id Q0 doc_id rank score tag`.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut run = Self::default();
        for (n, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let err = |m: String| Error::parse(source_name, n + 1, m);
            if cols.len() != 6 {
                return Err(err(format!("expected 6 columns, found {}", cols.len())));
            }
            let rank = cols[3].parse().map_err(|_| err(format!("bad rank `{}`", cols[3])))?;
            let score: f64 = cols[4].parse().map_err(|_| err(format!("bad score `{}`", cols[4])))?;
            run.tag = cols[5].to_string();
            run.queries.entry(cols[0].to_string()).or_default().push(RunEntry {
                doc_id: cols[2].to_string(),
                rank,
                score,
            });
        }
        Ok(run)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_trec(&self) -> String {
        let mut s = String::new();
        for (q, entries) in &self.queries {
            for e in entries {
                let _ = writeln!(s, "{q} Q0 {} {} {} {}", e.doc_id, e.rank, e.score, self.tag);
            }
        }
        s
    }
}
