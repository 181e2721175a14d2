//! Marker-position embedding extraction, the two-layer projector and cosine
//! relevance scores.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::HiddenStates;
use crate::error::{Error, Result};
use crate::numeric::{cosine, Tape, Tensor, Var};
use crate::params::{BoundParams, ParamStore};
use crate::prompt::PromptLayout;

pub const W1: &str = "projector.0.weight";
pub const B1: &str = "projector.0.bias";
pub const W2: &str = "projector.2.weight";
pub const B2: &str = "projector.2.bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub d_in: usize,
    pub d_mid: usize,
    pub d_out: usize,
}

impl ProjectorConfig {
    /// `d_hidden → 32 → 32`.
    pub fn toy(d_hidden: usize) -> Self {
        Self {
            d_in: d_hidden,
            d_mid: 32,
            d_out: 32,
        }
    }

    /// `1024 → 512 → 512`.
    pub fn full_scale() -> Self {
        Self {
            d_in: 1024,
            d_mid: 512,
            d_out: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_mid == 0 || self.d_out == 0 {
            return Err(Error::Config("projector dimensions must be positive".into()));
        }
        Ok(())
    }
}

pub fn is_projector_param(name: &str) -> bool {
    name.starts_with("projector.")
}

/// Weights ~ Normal(0, 1/√fan_in), zero biases.
pub fn init_projector(config: &ProjectorConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = |rows: usize, cols: usize| -> Result<Tensor> {
        let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| normal.sample(&mut rng)).collect())
    };
    let mut store = ParamStore::new();
    store.insert(W1, layer(config.d_mid, config.d_in)?);
    store.insert(B1, Tensor::zeros(&[config.d_mid]));
    store.insert(W2, layer(config.d_out, config.d_mid)?);
    store.insert(B2, Tensor::zeros(&[config.d_out]));
    Ok(store)
}

/// Applies `W2·relu(W1·x + b1) + b2` to every row of `x`.
pub fn project_on_tape(tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Var> {
    let w1 = params.var(W1)?;
    let w2 = params.var(W2)?;
    let (d_mid, d_in) = (tape.value(w1).rows(), tape.value(w1).cols());
    let x_cols = tape.value(x).shape().last().copied().unwrap_or(0);
    if x_cols != d_in {
        return Err(Error::Config(format!("projector expects width {d_in}, got {x_cols}")));
    }
    if tape.value(w2).cols() != d_mid {
        return Err(Error::Config("projector layers do not chain".into()));
    }
    let h = tape.linear(x, w1)?;
    let h = tape.add_row(h, params.var(B1)?)?;
    let h = tape.relu(h);
    let out = tape.linear(h, w2)?;
    tape.add_row(out, params.var(B2)?)
}

/// Untaped projection of the rows of `raw` (a vector is one row).
pub fn project(params: &ParamStore, raw: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, None, &|_| false);
    let x = match raw.shape() {
        [n] => Tensor::matrix(1, *n, raw.data().to_vec())?,
        _ => raw.clone(),
    };
    let x = tape.constant(x);
    let out = project_on_tape(&mut tape, &bound, x)?;
    let out = tape.take_leaf(out);
    match raw.shape() {
        [_] => Tensor::vector(out.into_data()),
        _ => Ok(out),
    }
}

/// Hidden rows at the marker positions of one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbeddings {
    pub query: Vec<f64>,
    pub dual_query: Option<Vec<f64>>,
    /// Indexed by the document's position in the request, not by slot.
    pub docs: Vec<Vec<f64>>,
}

fn check_position(position: usize, rows: usize) -> Result<usize> {
    if position >= rows {
        return Err(Error::LayoutMismatch { position, rows });
    }
    Ok(position)
}

/// Marker rows in the order `[query, dual query?, docs by request index]`.
pub fn marker_rows(layout: &PromptLayout, rows: usize) -> Result<Vec<usize>> {
    let mut out = vec![check_position(layout.query_marker_position, rows)?];
    if let Some(p) = layout.dual_query_marker_position {
        out.push(check_position(p, rows)?);
    }
    let mut by_request = vec![0; layout.doc_order.len()];
    for (slot, &orig) in layout.doc_order.iter().enumerate() {
        let p = *layout.doc_marker_positions.get(slot).ok_or(Error::LayoutMismatch {
            position: slot,
            rows: layout.doc_marker_positions.len(),
        })?;
        by_request[orig] = check_position(p, rows)?;
    }
    out.extend(by_request);
    Ok(out)
}

pub fn extract(hidden: &HiddenStates, layout: &PromptLayout) -> Result<RawEmbeddings> {
    let rows = marker_rows(layout, hidden.len())?;
    let mut it = rows.into_iter().map(|p| hidden.row(p).to_vec());
    let query = it.next().expect("query row");
    let dual_query = layout.dual_query_marker_position.map(|_| it.next().expect("dual row"));
    Ok(RawEmbeddings {
        query,
        dual_query,
        docs: it.collect(),
    })
}

pub fn score(q: &[f64], d: &[f64]) -> Result<f64> {
    cosine(q, d)
}
