//! A reranker model: backbone and projector weights, optional adapters and
//! the vocabulary, plus its on-disk checkpoint format.
//!
//! A checkpoint is the line `lbnl-checkpoint 1`, a line holding the byte
//! length of a JSON header, the header itself, then every tensor as
//! little-endian f64 values in manifest order.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{self, BackboneConfig, HiddenStates};
use crate::error::{Error, Result};
use crate::head::{self, ProjectorConfig};
use crate::numeric::{Tape, Tensor};
use crate::params::{BoundParams, ParamStore};
use crate::prompt::{PromptLayout, Vocabulary};
use crate::trainer::lora::{apply_lora, AdapterSet, LoraAdapter};

const MAGIC: &str = "lbnl-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub projector: ProjectorConfig,
}

impl ModelConfig {
    pub fn toy() -> Self {
        let backbone = BackboneConfig::default();
        let projector = ProjectorConfig::toy(backbone.d_hidden);
        Self { backbone, projector }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.projector.validate()?;
        if self.projector.d_in != self.backbone.d_hidden {
            return Err(Error::Config(format!(
                "projector input {} does not match hidden width {}",
                self.projector.d_in, self.backbone.d_hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Backbone and projector tensors.
    pub weights: ParamStore,
    pub adapters: Option<AdapterSet>,
}

/// Projected embeddings of one prompt. Documents are indexed by request
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub query: Vec<f64>,
    pub dual_query: Option<Vec<f64>>,
    pub docs: Vec<Vec<f64>>,
}

impl Model {
    /// Fresh weights. The vocabulary must fit the embedding table.
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.len() > config.backbone.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but the embedding table holds {}",
                vocab.len(),
                config.backbone.vocab_size
            )));
        }
        let mut weights = backbone::init_weights(&config.backbone, seed)?;
        for (name, t) in head::init_projector(&config.projector, seed.wrapping_add(1))?.iter() {
            weights.insert(name, t.clone());
        }
        Ok(Self {
            config,
            vocab,
            weights,
            adapters: None,
        })
    }

    /// Attaches zero-initialized adapters to every attention and
    /// feed-forward projection.
    pub fn with_fresh_adapters(mut self, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = backbone::adapter_targets(&self.config.backbone);
        self.adapters = Some(AdapterSet::init(
            &self.weights,
            targets.iter().map(String::as_str),
            rank,
            alpha,
            &mut rng,
        )?);
        Ok(self)
    }

    /// Adapters folded into the base weights.
    pub fn folded(&self) -> Result<Self> {
        let weights = match &self.adapters {
            Some(a) => apply_lora(&self.weights, a)?,
            None => self.weights.clone(),
        };
        Ok(Self {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            weights,
            adapters: None,
        })
    }

    pub fn hidden(&self, tokens: &[usize]) -> Result<HiddenStates> {
        backbone::forward(&self.config.backbone, &self.weights, self.adapters.as_ref(), tokens)
    }

    /// Forward pass, marker extraction and projection for one prompt.
    pub fn embed(&self, layout: &PromptLayout) -> Result<Embeddings> {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.weights, self.adapters.as_ref(), &|_| false);
        let hidden = backbone::forward_on_tape(&mut tape, &self.config.backbone, &bound, &layout.token_ids)?;
        let rows = head::marker_rows(layout, tape.value(hidden).rows())?;
        let picked = tape.gather(hidden, &rows)?;
        let projected = head::project_on_tape(&mut tape, &bound, picked)?;
        let out = tape.value(projected);
        let mut it = (0..out.rows()).map(|r| out.row(r).to_vec());
        let query = it.next().expect("query row");
        let dual_query = layout.dual_query_marker_position.map(|_| it.next().expect("dual row"));
        Ok(Embeddings {
            query,
            dual_query,
            docs: it.collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file), &path.display().to_string())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut BufReader::new(bytes), "<memory>")
    }

    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self.weights.iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(set) = &self.adapters {
            for (target, ad) in set.iter() {
                out.push((format!("{target}.lora_a"), &ad.a));
                out.push((format!("{target}.lora_b"), &ad.b));
            }
        }
        out
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let tensors = self.tensors();
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.to_tsv(),
            tensors: tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            adapters: self
                .adapters
                .iter()
                .flat_map(|s| s.iter())
                .map(|(target, ad)| AdapterEntry {
                    target: target.to_string(),
                    rank: ad.rank,
                    alpha: ad.alpha,
                })
                .collect(),
        };
        let json = serde_json::to_string(&header).expect("header serializes");
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "{}", json.len())?;
        w.write_all(json.as_bytes())?;
        for (_, t) in &tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn read_from(r: &mut impl BufRead, source: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::parse(source, line, msg);
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| bad(1, e.to_string()))?;
        if line.trim_end() != MAGIC {
            return Err(bad(1, "not a checkpoint".into()));
        }
        line.clear();
        r.read_line(&mut line).map_err(|e| bad(2, e.to_string()))?;
        let len: usize = line.trim().parse().map_err(|_| bad(2, "bad header length".into()))?;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|e| bad(3, e.to_string()))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(3, e.to_string()))?;
        header.config.validate()?;
        let vocab = Vocabulary::from_tsv(&header.vocab, source)?;

        let mut raw: Vec<(String, Tensor)> = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)
                .map_err(|_| bad(3, format!("tensor data for `{}` is truncated", entry.name)))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            raw.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| bad(3, e.to_string()))?;
        if !rest.is_empty() {
            return Err(bad(3, format!("{} trailing bytes after tensor data", rest.len())));
        }

        let mut weights = ParamStore::new();
        let mut factors = std::collections::HashMap::new();
        for (name, t) in raw {
            match name.rsplit_once(".lora_") {
                Some((target, f)) if f == "a" || f == "b" => {
                    factors.insert((target.to_string(), f.to_string()), t);
                }
                _ => weights.insert(name, t),
            }
        }
        let adapters = if header.adapters.is_empty() {
            None
        } else {
            let mut set = AdapterSet::default();
            for e in &header.adapters {
                let mut take = |f: &str| {
                    factors
                        .remove(&(e.target.clone(), f.to_string()))
                        .ok_or_else(|| bad(3, format!("adapter `{}` lacks factor {f}", e.target)))
                };
                let (a, b) = (take("a")?, take("b")?);
                set.insert(
                    e.target.clone(),
                    LoraAdapter {
                        a,
                        b,
                        rank: e.rank,
                        alpha: e.alpha,
                    },
                );
            }
            Some(set)
        };
        Ok(Self {
            config: header.config,
            vocab,
            weights,
            adapters,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdapterEntry {
    target: String,
    rank: usize,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: String,
    tensors: Vec<Entry>,
    adapters: Vec<AdapterEntry>,
}
