//! Weighted averaging of checkpoints that share one architecture.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::Model;

/// `Σ wᵢ·θᵢ / Σ wᵢ` per scalar. Adapters are folded into their base weights
/// before averaging. A single model comes back unchanged apart from the
/// folding.
pub fn merge_models(models: &[(&Model, f64)]) -> Result<Model> {
    let Some((first, _)) = models.first() else {
        return Err(Error::Merge {
            name: "<none>".into(),
            reason: "nothing to merge".into(),
        });
    };
    if let Some((_, w)) = models.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
        return Err(Error::Merge {
            name: "<weights>".into(),
            reason: format!("weight {w} is not a finite non-negative number"),
        });
    }
    let total: f64 = models.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::Merge {
            name: "<weights>".into(),
            reason: "weights sum to zero".into(),
        });
    }
    let folded: Vec<Model> = models.iter().map(|(m, _)| m.folded()).collect::<Result<_>>()?;
    let base = &folded[0];
    for m in &folded[1..] {
        if m.config != base.config {
            return Err(Error::Merge {
                name: "<config>".into(),
                reason: "architectures differ".into(),
            });
        }
        if m.vocab != base.vocab {
            return Err(Error::Merge {
                name: "<vocab>".into(),
                reason: "vocabularies differ".into(),
            });
        }
        let names: Vec<&str> = m.weights.names().collect();
        if let Some(n) = base.weights.names().find(|n| !names.contains(n)) {
            return Err(Error::Merge {
                name: n.to_string(),
                reason: "missing from a checkpoint".into(),
            });
        }
        if let Some(n) = names.iter().find(|n| !base.weights.contains(n)) {
            return Err(Error::Merge {
                name: n.to_string(),
                reason: "missing from the first checkpoint".into(),
            });
        }
    }
    if models.len() == 1 {
        return Ok(folded.into_iter().next().expect("one model"));
    }

    let mut out = Model {
        config: first.config.clone(),
        vocab: first.vocab.clone(),
        weights: base.weights.clone(),
        adapters: None,
    };
    for (name, t) in out.weights.iter_mut() {
        let mut acc: Vec<f64> = vec![0.0; t.numel()];
        for (m, (_, w)) in folded.iter().zip(models) {
            let src = m.weights.get(name)?;
            if src.shape() != t.shape() {
                return Err(Error::Merge {
                    name: name.to_string(),
                    reason: format!("shape {:?} vs {:?}", src.shape(), t.shape()),
                });
            }
            for (a, v) in acc.iter_mut().zip(src.data()) {
                *a += w * v;
            }
        }
        for (dst, a) in t.data_mut().iter_mut().zip(acc) {
            *dst = a / total;
        }
    }
    Ok(out)
}

/// Loads every checkpoint and merges them.
pub fn merge_checkpoints(paths: &[PathBuf], weights: &[f64]) -> Result<Model> {
    if paths.len() != weights.len() {
        return Err(Error::Merge {
            name: "<weights>".into(),
            reason: format!("{} checkpoints but {} weights", paths.len(), weights.len()),
        });
    }
    let models: Vec<Model> = paths.iter().map(|p| Model::load(p)).collect::<Result<_>>()?;
    let pairs: Vec<(&Model, f64)> = models.iter().zip(weights.iter().copied()).collect();
    merge_models(&pairs)
}
