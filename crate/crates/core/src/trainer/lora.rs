//! Low-rank adapters: a frozen weight `W[m×n]` is used as `W + (α/r)·B·A`
//! with `A[r×n]` and `B[m×r]`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::numeric::{matmul, Tensor};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: Tensor,
    pub b: Tensor,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    /// `A` uniform in `±1/√n`, `B` zero, so the adapted weight starts equal
    /// to the base weight.
    pub fn new(out_features: usize, in_features: usize, rank: usize, alpha: f64, rng: &mut impl Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("adapter rank must be at least 1".into()));
        }
        let bound = 1.0 / (in_features as f64).sqrt();
        let dist = Uniform::new(-bound, bound).map_err(|e| Error::Config(e.to_string()))?;
        let a = Tensor::matrix(
            rank,
            in_features,
            (0..rank * in_features).map(|_| dist.sample(rng)).collect(),
        )?;
        let b = Tensor::zeros(&[out_features, rank]);
        Ok(Self { a, b, rank, alpha })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `(α/r)·B·A`
    pub fn delta(&self) -> Result<Tensor> {
        Ok(matmul(&self.b, &self.a)?.scaled(self.scale()))
    }
}

/// Adapters keyed by the name of the weight they modify.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdapterSet {
    adapters: BTreeMap<String, LoraAdapter>,
}

impl AdapterSet {
    /// Fresh adapters for every listed target weight.
    pub fn init<'a>(
        base: &ParamStore,
        targets: impl IntoIterator<Item = &'a str>,
        rank: usize,
        alpha: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut adapters = BTreeMap::new();
        for name in targets {
            let w = base.get(name)?;
            let [out, inp] = *w.shape() else {
                return Err(Error::Config(format!("adapter target `{name}` is not a matrix")));
            };
            adapters.insert(name.to_string(), LoraAdapter::new(out, inp, rank, alpha, rng)?);
        }
        Ok(Self { adapters })
    }

    pub fn insert(&mut self, target: impl Into<String>, adapter: LoraAdapter) {
        self.adapters.insert(target.into(), adapter);
    }

    pub fn get(&self, target: &str) -> Option<&LoraAdapter> {
        self.adapters.get(target)
    }

    pub fn get_mut(&mut self, target: &str) -> Option<&mut LoraAdapter> {
        self.adapters.get_mut(target)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LoraAdapter)> {
        self.adapters.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut LoraAdapter)> {
        self.adapters.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }
}

/// Folds every adapter into its base weight.
pub fn apply_lora(base: &ParamStore, adapters: &AdapterSet) -> Result<ParamStore> {
    let mut out = base.clone();
    for (name, adapter) in adapters.iter() {
        let w = out.get_mut(name)?;
        let delta = adapter.delta()?;
        if delta.shape() != w.shape() {
            return Err(Error::Dimension {
                op: "apply_lora",
                left: w.shape().to_vec(),
                right: delta.shape().to_vec(),
            });
        }
        for (wv, dv) in w.data_mut().iter_mut().zip(delta.data()) {
            *wv += dv;
        }
    }
    Ok(out)
}
