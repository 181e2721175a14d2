//! Named parameter storage and binding of parameters onto a tape.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};
use crate::trainer::lora::AdapterSet;

/// Ordered map from parameter name to tensor. Iteration order is the sorted
/// name order, which fixes the checkpoint layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct BoundAdapter {
    a: Var,
    b: Var,
    scale: f64,
}

/// Parameters registered as leaves on one tape.
#[derive(Debug, Default)]
pub struct BoundParams {
    vars: HashMap<String, Var>,
    adapters: HashMap<String, BoundAdapter>,
    trainable: Vec<(String, Var)>,
}

impl BoundParams {
    /// Registers every base tensor and adapter factor on `tape`. A leaf is
    /// differentiable iff `trainable(name)` holds; adapter factors are named
    /// `<target>.lora_a` and `<target>.lora_b`.
    pub fn bind(
        tape: &mut Tape,
        params: &ParamStore,
        adapters: Option<&AdapterSet>,
        trainable: &dyn Fn(&str) -> bool,
    ) -> Self {
        let mut bound = Self::default();
        for (name, tensor) in params.iter() {
            let var = bound.register(tape, name.to_string(), tensor, trainable);
            bound.vars.insert(name.to_string(), var);
        }
        if let Some(set) = adapters {
            for (target, adapter) in set.iter() {
                let a = bound.register(tape, format!("{target}.lora_a"), &adapter.a, trainable);
                let b = bound.register(tape, format!("{target}.lora_b"), &adapter.b, trainable);
                bound.adapters.insert(
                    target.to_string(),
                    BoundAdapter {
                        a,
                        b,
                        scale: adapter.scale(),
                    },
                );
            }
        }
        bound
    }

    fn register(&mut self, tape: &mut Tape, name: String, tensor: &Tensor, trainable: &dyn Fn(&str) -> bool) -> Var {
        if trainable(&name) {
            let var = tape.param(tensor.clone());
            self.trainable.push((name, var));
            var
        } else {
            tape.constant(tensor.clone())
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    /// Effective weight `W + (α/r)·B·A` when an adapter targets `name`,
    /// otherwise the base weight.
    pub fn weight(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let base = self.var(name)?;
        match self.adapters.get(name) {
            None => Ok(base),
            Some(ad) => {
                let delta = tape.matmul(ad.b, ad.a)?;
                let delta = tape.scale(delta, ad.scale);
                tape.add(base, delta)
            }
        }
    }

    /// Routes `name` to an externally created node, e.g. the leaf under test
    /// in a gradient check.
    pub fn with_override(mut self, name: &str, var: Var) -> Self {
        if let Some((target, factor)) = name.rsplit_once(".lora_") {
            if let Some(ad) = self.adapters.get_mut(target) {
                match factor {
                    "a" => ad.a = var,
                    "b" => ad.b = var,
                    _ => {}
                }
                return self;
            }
        }
        self.vars.insert(name.to_string(), var);
        self
    }

    /// Differentiable leaves in registration order.
    pub fn trainable(&self) -> &[(String, Var)] {
        &self.trainable
    }
}
