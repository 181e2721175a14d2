//! Finite-difference gradient checks of every differentiable component on
//! small random instances.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, BackboneConfig, EMBED, FINAL_NORM};
use crate::error::{Error, Result};
use crate::head::{self, ProjectorConfig, B1, B2, W1, W2};
use crate::losses::{
    disperse_loss, dual_loss, rank_loss, similar_loss, total_loss, LossWeights, QueryGroup, TrainingBatch,
};
use crate::numeric::{finite_diff_check, finite_diff_check_coords, Tape, Tensor, Var};
use crate::params::{BoundParams, ParamStore};
use crate::trainer::lora::AdapterSet;

/// Relative error above which a check fails.
pub const THRESHOLD: f64 = 1e-4;

const STEP: f64 = 1e-6;
/// The backbone objective sums many terms; a wider step keeps roundoff
/// below truncation error.
const BACKBONE_STEP: f64 = 1e-5;
/// Coordinates probed per backbone tensor.
const SAMPLED_COORDS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Losses,
    Projector,
    Lora,
    Backbone,
}

impl Component {
    pub const ALL: [Component; 4] = [Self::Losses, Self::Projector, Self::Lora, Self::Backbone];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Losses => "losses",
            Self::Projector => "projector",
            Self::Lora => "lora",
            Self::Backbone => "backbone",
        })
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::Validation(format!("unknown component `{s}` (losses, projector, lora, backbone)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub component: Component,
    /// What was differentiated, e.g. `dual/query` or `layers.0.attn.q`.
    pub target: String,
    pub rel_error: f64,
}

pub fn worst(checks: &[Check]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}

pub fn check_component(component: Component, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = match component {
        Component::Losses => check_losses(&mut rng)?,
        Component::Projector => check_projector(&mut rng)?,
        Component::Lora => check_lora(&mut rng)?,
        Component::Backbone => check_backbone(&mut rng)?,
    };
    Ok(raw
        .into_iter()
        .map(|(target, rel_error)| Check {
            component,
            target,
            rel_error,
        })
        .collect())
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

fn random_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_batch(rng: &mut ChaCha8Rng) -> TrainingBatch<Vec<f64>> {
    let (n, k, d) = (3, 4, 5);
    let mut groups: Vec<QueryGroup<Vec<f64>>> = (0..n)
        .map(|_| QueryGroup {
            query: random_vec(d, rng),
            dual_query: Some(random_vec(d, rng)),
            positive: random_vec(d, rng),
            negatives: (0..k).map(|_| random_vec(d, rng)).collect(),
            augmented: Some(random_vec(d, rng)),
            inbatch_negatives: Vec::new(),
        })
        .collect();
    let positives: Vec<Vec<f64>> = groups.iter().map(|g| g.positive.clone()).collect();
    for (i, g) in groups.iter_mut().enumerate() {
        g.inbatch_negatives = positives
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, p)| p.clone())
            .collect();
    }
    TrainingBatch {
        groups,
        temperature: rng.random_range(0.2..1.0),
    }
}

type LossFn = fn(&mut Tape, &TrainingBatch<Var>, &LossWeights) -> Result<Var>;

type Role = (
    &'static str,
    fn(&mut QueryGroup<Var>, Var),
    fn(&QueryGroup<Vec<f64>>) -> Vec<f64>,
);

const ROLES: [Role; 6] = [
    ("query", |g, v| g.query = v, |g| g.query.clone()),
    (
        "dual_query",
        |g, v| g.dual_query = Some(v),
        |g| g.dual_query.clone().expect("dual"),
    ),
    ("positive", |g, v| g.positive = v, |g| g.positive.clone()),
    ("negative", |g, v| g.negatives[0] = v, |g| g.negatives[0].clone()),
    (
        "augmented",
        |g, v| g.augmented = Some(v),
        |g| g.augmented.clone().expect("augmented"),
    ),
    (
        "inbatch",
        |g, v| g.inbatch_negatives[0] = v,
        |g| g.inbatch_negatives[0].clone(),
    ),
];

fn check_losses(rng: &mut ChaCha8Rng) -> Result<Vec<(String, f64)>> {
    let batch = random_batch(rng);
    let weights = LossWeights::default();
    let losses: [(&str, LossFn); 5] = [
        ("rank", |t, b, _| rank_loss(t, b)),
        ("disperse", |t, b, _| disperse_loss(t, b)),
        ("dual", |t, b, _| dual_loss(t, b)),
        ("similar", |t, b, _| similar_loss(t, b)),
        ("total", |t, b, w| Ok(total_loss(t, b, w)?.total)),
    ];
    let mut out = Vec::new();
    for (loss_name, loss) in losses {
        for (role, set, get) in ROLES {
            let x = Tensor::vector(get(&batch.groups[0]))?;
            let b = batch.clone();
            let f = move |t: &mut Tape, v: Var| {
                let mut bound = b.bind(t, false)?;
                set(&mut bound.groups[0], v);
                loss(t, &bound, &weights)
            };
            out.push((format!("{loss_name}/{role}"), finite_diff_check(f, &x, STEP)?));
        }
    }
    Ok(out)
}

fn projector_objective(tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
    let out = head::project_on_tape(tape, bound, x)?;
    let a = tape.select_row(out, 0)?;
    let b = tape.select_row(out, 1)?;
    tape.cosine(a, b)
}

fn check_projector(rng: &mut ChaCha8Rng) -> Result<Vec<(String, f64)>> {
    let cfg = ProjectorConfig {
        d_in: 6,
        d_mid: 5,
        d_out: 4,
    };
    let mut params = head::init_projector(&cfg, rng.random())?;
    for name in [B1, B2] {
        let len = params.get(name)?.numel();
        params.insert(name, Tensor::vector(random_vec(len, rng))?.scaled(0.1));
    }
    let x = random_tensor(&[2, 6], rng);
    let mut out = Vec::new();
    for name in [W1, B1, W2, B2] {
        let (p, xc) = (params.clone(), x.clone());
        let f = move |t: &mut Tape, w: Var| {
            let bound = BoundParams::bind(t, &p, None, &|_| false).with_override(name, w);
            let xv = t.constant(xc.clone());
            projector_objective(t, &bound, xv)
        };
        out.push((name.to_string(), finite_diff_check(f, params.get(name)?, STEP)?));
    }
    let p = params.clone();
    let f = move |t: &mut Tape, xv: Var| {
        let bound = BoundParams::bind(t, &p, None, &|_| false);
        projector_objective(t, &bound, xv)
    };
    out.push(("input".into(), finite_diff_check(f, &x, STEP)?));
    Ok(out)
}

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        n_layers: 2,
        d_hidden: 16,
        n_q_heads: 4,
        n_kv_heads: 2,
        d_ffn: 24,
        max_context: 32,
        effective_context: 32,
        vocab_size: 40,
        ..Default::default()
    }
}

/// `Σ h ⊙ r` for a fixed random `r`, so every hidden coordinate matters.
fn hidden_objective(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    bound: &BoundParams,
    tokens: &[usize],
    probe: &Tensor,
) -> Result<Var> {
    let h = backbone::forward_on_tape(tape, cfg, bound, tokens)?;
    let r = tape.constant(probe.clone());
    let hr = tape.mul(h, r)?;
    Ok(tape.sum(hr))
}

fn sampled(x: &Tensor, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if x.numel() <= SAMPLED_COORDS {
        return (0..x.numel()).collect();
    }
    (0..SAMPLED_COORDS).map(|_| rng.random_range(0..x.numel())).collect()
}

fn check_params(
    rng: &mut ChaCha8Rng,
    cfg: &BackboneConfig,
    weights: &ParamStore,
    adapters: Option<&AdapterSet>,
    names: &[String],
) -> Result<Vec<(String, f64)>> {
    let tokens: Vec<usize> = (0..10).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
    let probe = random_tensor(&[tokens.len(), cfg.d_hidden], rng);
    let mut out = Vec::new();
    for name in names {
        let x = match name.rsplit_once(".lora_") {
            Some((target, f)) => {
                let ad = adapters
                    .and_then(|s| s.get(target))
                    .ok_or_else(|| Error::Config(format!("no adapter `{target}`")))?;
                if f == "a" {
                    ad.a.clone()
                } else {
                    ad.b.clone()
                }
            }
            None => weights.get(name)?.clone(),
        };
        let coords = sampled(&x, rng);
        let (w, a, c, t, p, n) = (
            weights.clone(),
            adapters.cloned(),
            cfg.clone(),
            tokens.clone(),
            probe.clone(),
            name.clone(),
        );
        let f = move |tape: &mut Tape, xv: Var| {
            let bound = BoundParams::bind(tape, &w, a.as_ref(), &|_| false).with_override(&n, xv);
            hidden_objective(tape, &c, &bound, &t, &p)
        };
        out.push((name.clone(), finite_diff_check_coords(f, &x, BACKBONE_STEP, &coords)?));
    }
    Ok(out)
}

/// Backbone weights at unit scale (`±1/√fan_in`, gains near one) so that
/// attention logits and their gradients are far from roundoff.
fn random_backbone(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
    let mut weights = backbone::init_weights(cfg, rng.random())?;
    for (_, t) in weights.iter_mut() {
        let shape = t.shape().to_vec();
        *t = match shape.as_slice() {
            [n] => Tensor::vector((0..*n).map(|_| rng.random_range(0.8..1.2)).collect())?,
            [_, fan_in] => random_tensor(&shape, rng).scaled(1.0 / (*fan_in as f64).sqrt()),
            _ => random_tensor(&shape, rng),
        };
    }
    Ok(weights)
}

fn check_backbone(rng: &mut ChaCha8Rng) -> Result<Vec<(String, f64)>> {
    let cfg = tiny_backbone();
    let weights = random_backbone(&cfg, rng)?;
    let mut names = vec![EMBED.to_string(), FINAL_NORM.to_string()];
    for l in 0..cfg.n_layers {
        for p in ["attn_norm", "ffn_norm"] {
            names.push(backbone::layer_param(l, p));
        }
    }
    names.extend(backbone::adapter_targets(&cfg));
    check_params(rng, &cfg, &weights, None, &names)
}

fn check_lora(rng: &mut ChaCha8Rng) -> Result<Vec<(String, f64)>> {
    let cfg = tiny_backbone();
    let weights = random_backbone(&cfg, rng)?;
    let targets = backbone::adapter_targets(&cfg);
    let mut adapters = AdapterSet::init(&weights, targets.iter().map(String::as_str), 2, 4.0, rng)?;
    for (_, ad) in adapters.iter_mut() {
        let shape = ad.b.shape().to_vec();
        ad.b = random_tensor(&shape, rng).scaled(0.2);
    }
    let names: Vec<String> = targets
        .iter()
        .flat_map(|t| [format!("{t}.lora_a"), format!("{t}.lora_b")])
        .collect();
    check_params(rng, &cfg, &weights, Some(&adapters), &names)
}
