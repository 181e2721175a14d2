use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Low-rank adapters, projector and optionally the embedding table.
    AdaptersOnly,
    /// Every backbone weight and the projector.
    Full,
    /// No optimization; linear combination of checkpoints.
    Merge,
}

/// Hyperparameters of one training stage, read from a flat TOML document
/// whose keys mirror the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub mode: TrainMode,
    pub learning_rate: f64,
    /// Queries per optimizer step.
    pub batch_size: usize,
    pub max_doc_tokens: usize,
    pub max_query_tokens: Option<usize>,
    pub max_seq_tokens: usize,
    pub n_negatives: usize,
    pub n_inbatch_negatives: usize,
    pub temperature: f64,
    pub w_disperse: f64,
    pub w_dual: f64,
    pub w_similar: f64,
    pub steps: usize,
    pub seed: u64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub tune_embeddings: bool,
    pub pad_documents: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Evaluate the training queries every this many steps (0 = never).
    pub eval_every: usize,
    /// Stop once training nDCG@10 reaches this value.
    pub target_ndcg: Option<f64>,
    pub merge_checkpoints: Vec<PathBuf>,
    pub merge_weights: Vec<f64>,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl StageConfig {
    /// Foundation stage: adapters r=16/α=32, tuned embeddings, 15 negatives,
    /// 3 in-batch negatives, τ = 0.25, lr 5e-5, 60 queries per step,
    /// documents cut at 768 tokens.
    pub fn stage1() -> Self {
        Self {
            name: "stage1".into(),
            mode: TrainMode::AdaptersOnly,
            learning_rate: 5e-5,
            batch_size: 60,
            max_doc_tokens: 768,
            max_query_tokens: None,
            max_seq_tokens: 12_288,
            n_negatives: 15,
            n_inbatch_negatives: 3,
            temperature: 0.25,
            w_disperse: 0.45,
            w_dual: 0.85,
            w_similar: 0.85,
            steps: 1000,
            seed: 0,
            lora_rank: 16,
            lora_alpha: 32.0,
            tune_embeddings: true,
            pad_documents: false,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            eval_every: 0,
            target_ndcg: None,
            merge_checkpoints: Vec::new(),
            merge_weights: Vec::new(),
        }
    }

    /// Long-document regime: full tuning at lr 6e-6, 6 queries per step,
    /// 2048-token documents in 8192-token sequences, 9 negatives.
    pub fn stage2_long_documents() -> Self {
        Self {
            name: "stage2-long".into(),
            mode: TrainMode::Full,
            learning_rate: 6e-6,
            batch_size: 6,
            max_doc_tokens: 2048,
            max_query_tokens: Some(512),
            max_seq_tokens: 8192,
            n_negatives: 9,
            n_inbatch_negatives: 0,
            ..Self::stage1()
        }
    }

    /// Hard-negative regime: adapters, 25 mined negatives, τ = 0.05 and the
    /// lower auxiliary weights.
    pub fn stage2_hard_negatives() -> Self {
        Self {
            name: "stage2-hard".into(),
            max_doc_tokens: 512,
            max_query_tokens: Some(256),
            max_seq_tokens: 2048,
            n_negatives: 25,
            temperature: 0.05,
            w_disperse: 0.25,
            w_dual: 0.65,
            w_similar: 0.75,
            tune_embeddings: false,
            ..Self::stage1()
        }
    }

    /// Stage-1 settings scaled to the toy backbone trained from scratch:
    /// larger learning rate, 16 queries per step, stop at nDCG@10 0.95.
    pub fn toy_overfit() -> Self {
        Self {
            name: "overfit".into(),
            learning_rate: 1e-3,
            batch_size: 16,
            steps: 2000,
            eval_every: 25,
            target_ndcg: Some(0.95),
            ..Self::stage1()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "stage1" => Ok(Self::stage1()),
            "overfit" => Ok(Self::toy_overfit()),
            "stage2-long" => Ok(Self::stage2_long_documents()),
            "stage2-hard" => Ok(Self::stage2_hard_negatives()),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (stage1, stage2-long, stage2-hard, overfit)"
            ))),
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            disperse: self.w_disperse,
            dual: self.w_dual,
            similar: self.w_similar,
        }
    }

    /// Parses a stage file. Keys not present keep the stage-1 defaults; a
    /// `preset` key selects a different base.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let base = match table.remove("preset") {
            Some(toml::Value::String(p)) => Self::preset(&p)?,
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
            None => Self::stage1(),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merged.extend(table);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("stage config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if self.mode == TrainMode::Merge {
            if self.merge_checkpoints.is_empty() || self.merge_checkpoints.len() != self.merge_weights.len() {
                return Err(Error::Config(
                    "merge mode needs matching, non-empty merge_checkpoints and merge_weights".into(),
                ));
            }
            return Ok(());
        }
        let positive = [
            ("batch_size", self.batch_size),
            ("max_doc_tokens", self.max_doc_tokens),
            ("max_seq_tokens", self.max_seq_tokens),
            ("n_negatives", self.n_negatives),
            ("lora_rank", self.lora_rank),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let checks = [
            ("learning_rate", self.learning_rate > 0.0),
            ("temperature", self.temperature > 0.0),
            ("lora_alpha", self.lora_alpha > 0.0),
            ("beta1", (0.0..1.0).contains(&self.beta1)),
            ("beta2", (0.0..1.0).contains(&self.beta2)),
            ("adam_eps", self.adam_eps > 0.0),
            ("weight_decay", self.weight_decay >= 0.0),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::Config(format!("{name} is out of range")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage1_defaults() {
        let c = StageConfig::stage1();
        assert_eq!(c.learning_rate, 5e-5);
        assert_eq!(c.n_negatives, 15);
        assert_eq!(c.temperature, 0.25);
        assert_eq!(c.mode, TrainMode::AdaptersOnly);
        assert_eq!((c.lora_rank, c.lora_alpha), (16, 32.0));
        assert_eq!(c.weights(), LossWeights::default());
        let parsed = StageConfig::from_toml("").unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn toml_overrides_and_presets() {
        let c = StageConfig::from_toml("preset = \"stage2-hard\"\nsteps = 3\nlearning_rate = 1e-3\n").unwrap();
        assert_eq!(c.n_negatives, 25);
        assert_eq!(c.temperature, 0.05);
        assert_eq!(c.steps, 3);
        assert_eq!(c.learning_rate, 1e-3);
        let round = StageConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn bad_files_are_config_errors() {
        assert!(matches!(StageConfig::from_toml("bogus_key = 1"), Err(Error::Config(_))));
        assert!(matches!(
            StageConfig::from_toml("temperature = 0.0"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            StageConfig::from_toml("preset = \"stage9\""),
            Err(Error::Config(_))
        ));
        assert!(StageConfig::from_toml("mode = \"merge\"").is_err());
        let ok = StageConfig::from_toml(
            "mode = \"merge\"\nmerge_checkpoints = [\"a\", \"b\"]\nmerge_weights = [0.25, 0.65]",
        )
        .unwrap();
        assert_eq!(ok.merge_weights, vec![0.25, 0.65]);
    }
}
