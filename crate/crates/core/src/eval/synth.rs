//! Synthetic relevance corpus. Each query is a short pattern of invented
//! words; its positive document contains every pattern word. Negatives
//! never hold the full pattern, but near misses carry all of it except one
//! word, so an encoder has to count matches rather than spot any of them.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trec::Qrels;
use crate::error::{Error, Result};
use crate::io::write_jsonl;
use crate::prompt::{Document, RequestRecord};
use crate::trainer::data::TrainingExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub docs_per_query: usize,
    pub pattern_len: usize,
    pub filler_words: usize,
    pub min_doc_words: usize,
    pub max_doc_words: usize,
    /// Chance that a negative borrows a pattern word of another query.
    pub foreign_pattern_rate: f64,
    /// Chance that a negative carries every pattern word but one.
    pub near_miss_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_queries: 50,
            docs_per_query: 8,
            pattern_len: 3,
            filler_words: 200,
            min_doc_words: 10,
            max_doc_words: 16,
            foreign_pattern_rate: 0.15,
            near_miss_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<RequestRecord>,
    pub qrels: Qrels,
    pub patterns: Vec<Vec<String>>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn invent_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<SyntheticCorpus> {
    if config.n_queries == 0 || config.docs_per_query < 2 || config.pattern_len == 0 {
        return Err(Error::Validation(
            "need at least one query, two documents per query and a non-empty pattern".into(),
        ));
    }
    if config.min_doc_words < config.pattern_len
        || config.max_doc_words < config.min_doc_words
        || config.filler_words == 0
    {
        return Err(Error::Validation("inconsistent document length settings".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let words = invent_words(&mut rng, config.n_queries * config.pattern_len + config.filler_words);
    let (pattern_pool, filler) = words.split_at(config.n_queries * config.pattern_len);
    let patterns: Vec<Vec<String>> = pattern_pool
        .chunks(config.pattern_len)
        .map(<[String]>::to_vec)
        .collect();

    let mut records = Vec::with_capacity(config.n_queries);
    let mut qrels = Qrels::default();
    for (qi, pattern) in patterns.iter().enumerate() {
        let query_id = format!("q{qi:03}");
        let positive_slot = rng.random_range(0..config.docs_per_query);
        let mut docs = Vec::with_capacity(config.docs_per_query);
        for slot in 0..config.docs_per_query {
            let len = rng.random_range(config.min_doc_words..=config.max_doc_words);
            let mut text: Vec<String> = (0..len).map(|_| filler.choose(&mut rng).unwrap().clone()).collect();
            if slot == positive_slot {
                let mut positions: Vec<usize> = (0..len).collect();
                positions.shuffle(&mut rng);
                for (w, &p) in pattern.iter().zip(&positions) {
                    text[p] = w.clone();
                }
            } else if patterns.len() > 1 {
                for w in text.iter_mut() {
                    if rng.random_bool(config.foreign_pattern_rate) {
                        let other = loop {
                            let o = rng.random_range(0..patterns.len());
                            if o != qi {
                                break o;
                            }
                        };
                        *w = patterns[other].choose(&mut rng).unwrap().clone();
                    }
                }
            }
            if slot != positive_slot && rng.random_bool(config.near_miss_rate) {
                let skip = rng.random_range(0..pattern.len());
                let mut positions: Vec<usize> = (0..len).collect();
                positions.shuffle(&mut rng);
                let kept = pattern.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, w)| w);
                for (w, &p) in kept.zip(&positions) {
                    text[p] = w.clone();
                }
            }
            let text = text.join(" ");
            let overlap = pattern
                .iter()
                .filter(|p| text.split(' ').any(|w| w == p.as_str()))
                .count();
            let score = overlap as f64 / pattern.len() as f64 + rng.random_range(0.0..0.3);
            let doc_id = format!("{query_id}-d{slot}");
            qrels.insert(&query_id, &doc_id, u32::from(slot == positive_slot))?;
            docs.push(Document::new(doc_id, text).with_score(score));
        }
        records.push(RequestRecord {
            query_id,
            query_text: pattern.join(" "),
            docs,
        });
    }
    Ok(SyntheticCorpus {
        records,
        qrels,
        patterns,
    })
}

impl SyntheticCorpus {
    /// Every query and document text, for vocabulary building.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records
            .iter()
            .flat_map(|r| std::iter::once(r.query_text.as_str()).chain(r.docs.iter().map(|d| d.text.as_str())))
    }

    pub fn training_examples(&self) -> Vec<TrainingExample> {
        self.records
            .iter()
            .map(|r| {
                let judged = self.qrels.get(&r.query_id);
                let is_pos = |d: &Document| judged.and_then(|j| j.get(&d.id)).is_some_and(|&rel| rel > 0);
                let positive = r
                    .docs
                    .iter()
                    .find(|d| is_pos(d))
                    .expect("one positive per query")
                    .clone();
                TrainingExample {
                    query_id: r.query_id.clone(),
                    query: r.query_text.clone(),
                    positive,
                    negatives: r.docs.iter().filter(|d| !is_pos(d)).cloned().collect(),
                }
            })
            .collect()
    }

    /// Writes `requests.jsonl`, `qrels.txt` and `train.jsonl` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("requests.jsonl"), &self.records)?;
        let qrels = dir.join("qrels.txt");
        std::fs::write(&qrels, self.qrels.to_trec()).map_err(|e| Error::io(&qrels, e))?;
        write_jsonl(&dir.join("train.jsonl"), &self.training_examples())
    }
}
