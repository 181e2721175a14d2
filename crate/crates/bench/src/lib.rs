//! Fixtures shared by the benchmarks.

use lbnl_core::eval::{generate_synthetic_corpus, SynthConfig, SyntheticCorpus};
use lbnl_core::model::{Model, ModelConfig};
use lbnl_core::prompt::{template_words, Vocabulary};

/// The default synthetic corpus and a freshly initialized toy model on it.
pub fn toy_setup() -> (Model, SyntheticCorpus) {
    let corpus = generate_synthetic_corpus(&SynthConfig::default()).expect("default corpus");
    let words = template_words(64);
    let vocab = Vocabulary::build(words.iter().map(String::as_str), corpus.texts(), None);
    let model = Model::init(ModelConfig::toy(), vocab, 0).expect("toy model");
    (model, corpus)
}
