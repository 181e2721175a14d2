//! Small causal transformer: grouped-query attention with rotary positions,
//! RMS normalization and a SiLU-gated feed-forward block.

mod config;

pub use config::BackboneConfig;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};
use crate::params::{BoundParams, ParamStore};
use crate::trainer::lora::AdapterSet;

pub const EMBED: &str = "embed";
pub const FINAL_NORM: &str = "final_norm";

/// Final-layer activations, one row per input token.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates(Tensor);

impl HiddenStates {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "hidden_states",
                left: t.shape().to_vec(),
                right: vec![0, 0],
            });
        }
        Ok(Self(t))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.numel() == 0
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, p: usize) -> &[f64] {
        self.0.row(p)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

pub fn layer_param(layer: usize, name: &str) -> String {
    format!("layers.{layer}.{name}")
}

/// Names of every projection an adapter may target: all attention and
/// feed-forward matrices.
pub fn adapter_targets(config: &BackboneConfig) -> Vec<String> {
    (0..config.n_layers)
        .flat_map(|l| {
            ["attn.q", "attn.k", "attn.v", "attn.o", "ffn.gate", "ffn.up", "ffn.down"]
                .into_iter()
                .map(move |n| layer_param(l, n))
        })
        .collect()
}

/// Normal(0, 0.02) initialization; output projections of each residual
/// branch are further scaled by `1/√(2·n_layers)`; norm gains start at one.
pub fn init_weights(config: &BackboneConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).map_err(|e| Error::Config(e.to_string()))?;
    let out_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
    let mut sample = |rows: usize, cols: usize, scale: f64| -> Result<Tensor> {
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| normal.sample(&mut rng) * scale).collect(),
        )
    };
    let d = config.d_hidden;
    let kv = config.kv_width();
    let mut store = ParamStore::new();
    store.insert(EMBED, sample(config.vocab_size, d, 1.0)?);
    for l in 0..config.n_layers {
        store.insert(layer_param(l, "attn_norm"), Tensor::full(&[d], 1.0));
        store.insert(layer_param(l, "attn.q"), sample(d, d, 1.0)?);
        store.insert(layer_param(l, "attn.k"), sample(kv, d, 1.0)?);
        store.insert(layer_param(l, "attn.v"), sample(kv, d, 1.0)?);
        store.insert(layer_param(l, "attn.o"), sample(d, d, out_scale)?);
        store.insert(layer_param(l, "ffn_norm"), Tensor::full(&[d], 1.0));
        store.insert(layer_param(l, "ffn.gate"), sample(config.d_ffn, d, 1.0)?);
        store.insert(layer_param(l, "ffn.up"), sample(config.d_ffn, d, 1.0)?);
        store.insert(layer_param(l, "ffn.down"), sample(d, config.d_ffn, out_scale)?);
    }
    store.insert(FINAL_NORM, Tensor::full(&[d], 1.0));
    Ok(store)
}

fn check_tokens(config: &BackboneConfig, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Validation("cannot run the backbone on an empty sequence".into()));
    }
    if tokens.len() > config.max_context {
        return Err(Error::Length {
            len: tokens.len(),
            limit: config.max_context,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::UnknownToken {
            id,
            vocab_size: config.vocab_size,
        });
    }
    Ok(())
}

/// Records the full forward pass on `tape` and returns the `[L × d_hidden]`
/// final hidden states.
pub fn forward_on_tape(
    tape: &mut Tape,
    config: &BackboneConfig,
    params: &BoundParams,
    tokens: &[usize],
) -> Result<Var> {
    check_tokens(config, tokens)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let hd = config.head_dim();
    let mut x = tape.gather(params.var(EMBED)?, tokens)?;
    for l in 0..config.n_layers {
        let h = tape.rms_norm_rows(x, params.var(&layer_param(l, "attn_norm"))?, config.rms_eps)?;
        let wq = params.weight(tape, &layer_param(l, "attn.q"))?;
        let wk = params.weight(tape, &layer_param(l, "attn.k"))?;
        let wv = params.weight(tape, &layer_param(l, "attn.v"))?;
        let q = tape.linear(h, wq)?;
        let k = tape.linear(h, wk)?;
        let v = tape.linear(h, wv)?;
        let q = tape.rope(q, hd, &positions, config.rope_base)?;
        let k = tape.rope(k, hd, &positions, config.rope_base)?;
        let attn = tape.causal_attention(q, k, v, config.n_q_heads, config.n_kv_heads)?;
        let wo = params.weight(tape, &layer_param(l, "attn.o"))?;
        let attn = tape.linear(attn, wo)?;
        x = tape.add(x, attn)?;

        let h = tape.rms_norm_rows(x, params.var(&layer_param(l, "ffn_norm"))?, config.rms_eps)?;
        let wg = params.weight(tape, &layer_param(l, "ffn.gate"))?;
        let wu = params.weight(tape, &layer_param(l, "ffn.up"))?;
        let gate = tape.linear(h, wg)?;
        let gate = tape.silu(gate);
        let up = tape.linear(h, wu)?;
        let act = tape.mul(gate, up)?;
        let wd = params.weight(tape, &layer_param(l, "ffn.down"))?;
        let down = tape.linear(act, wd)?;
        x = tape.add(x, down)?;
    }
    tape.rms_norm_rows(x, params.var(FINAL_NORM)?, config.rms_eps)
}

/// Untaped forward pass.
pub fn forward(
    config: &BackboneConfig,
    weights: &ParamStore,
    adapters: Option<&AdapterSet>,
    tokens: &[usize],
) -> Result<HiddenStates> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, weights, adapters, &|_| false);
    let out = forward_on_tape(&mut tape, config, &bound, tokens)?;
    HiddenStates::new(tape.take_leaf(out))
}

/// Ungrouped multi-head attention composed from primitive tape operations.
/// Serves as the reference the fused kernel is checked against.
pub fn reference_attention(tape: &mut Tape, q: Var, k: Var, v: Var, n_heads: usize) -> Result<Var> {
    let width = tape.value(q).cols();
    if !width.is_multiple_of(n_heads) || tape.value(k).cols() != width {
        return Err(Error::Config(format!(
            "reference attention needs {n_heads} equal heads for widths {width} and {}",
            tape.value(k).cols()
        )));
    }
    let hd = width / n_heads;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt());
        let masked = tape.mask_causal(scores)?;
        let probs = tape.softmax_rows(masked);
        heads.push(tape.matmul(probs, vh)?);
    }
    tape.concat_cols(&heads)
}
