use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TffError;
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TffConfig {
    pub d_text_in: usize,
    pub d_patch_in: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_qformer_blocks: usize,
    pub n_self_blocks: usize,
    pub ff_multiplier: usize,
    pub seed: u64,
}

impl Default for TffConfig {
    fn default() -> Self {
        Self {
            d_text_in: 768,
            d_patch_in: 512,
            d_model: 256,
            n_heads: 4,
            n_qformer_blocks: 2,
            n_self_blocks: 1,
            ff_multiplier: 4,
            seed: 0,
        }
    }
}

impl TffConfig {
    pub fn validate(&self) -> Result<(), TffError> {
        let counts = [
            ("d_text_in", self.d_text_in),
            ("d_patch_in", self.d_patch_in),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_qformer_blocks", self.n_qformer_blocks),
            ("n_self_blocks", self.n_self_blocks),
            ("ff_multiplier", self.ff_multiplier),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(TffError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(TffError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Architecture fields compared at checkpoint load (the seed only drives
    /// initialization).
    pub(crate) fn architecture(&self) -> [(&'static str, u64); 7] {
        [
            ("d_text_in", self.d_text_in as u64),
            ("d_patch_in", self.d_patch_in as u64),
            ("d_model", self.d_model as u64),
            ("n_heads", self.n_heads as u64),
            ("n_qformer_blocks", self.n_qformer_blocks as u64),
            ("n_self_blocks", self.n_self_blocks as u64),
            ("ff_multiplier", self.ff_multiplier as u64),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Glorot,
    Zeros,
    Ones,
}

type Entry = (String, (usize, usize), Init);

fn push_linear(out: &mut Vec<Entry>, name: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{name}.weight"), (fan_in, fan_out), Init::Glorot));
    out.push((format!("{name}.bias"), (1, fan_out), Init::Zeros));
}

fn push_norm(out: &mut Vec<Entry>, name: &str, d: usize) {
    out.push((format!("{name}.gain"), (1, d), Init::Ones));
    out.push((format!("{name}.shift"), (1, d), Init::Zeros));
}

fn push_attention(out: &mut Vec<Entry>, name: &str, d: usize) {
    for p in ["q", "k", "v", "o"] {
        push_linear(out, &format!("{name}.{p}"), d, d);
    }
}

/// Parameter names, shapes and initializers in canonical order.
pub(crate) fn layout(cfg: &TffConfig) -> Vec<Entry> {
    let d = cfg.d_model;
    let f = d * cfg.ff_multiplier;
    let mut out = Vec::new();
    push_linear(&mut out, "text_proj", cfg.d_text_in, d);
    push_linear(&mut out, "patch_proj", cfg.d_patch_in, d);
    for (stack, n) in [("qformer", cfg.n_qformer_blocks), ("self", cfg.n_self_blocks)] {
        for b in 0..n {
            let p = format!("{stack}.{b}");
            push_norm(&mut out, &format!("{p}.ln1"), d);
            push_attention(&mut out, &format!("{p}.attn"), d);
            push_norm(&mut out, &format!("{p}.ln2"), d);
            push_linear(&mut out, &format!("{p}.ff.up"), d, f);
            push_linear(&mut out, &format!("{p}.ff.down"), f, d);
        }
    }
    push_norm(&mut out, "cross.ln_q", d);
    push_norm(&mut out, "cross.ln_kv", d);
    push_attention(&mut out, "cross.attn", d);
    push_norm(&mut out, "cross.ln2", d);
    push_linear(&mut out, "cross.ff.up", d, f);
    push_linear(&mut out, "cross.ff.down", f, d);
    push_linear(&mut out, "head", d, 1);
    out
}

/// Closed-form parameter count for a configuration.
pub fn expected_param_count(cfg: &TffConfig) -> usize {
    let d = cfg.d_model;
    let f = d * cfg.ff_multiplier;
    let attn = 4 * (d * d + d);
    let ff = d * f + f + f * d + d;
    let encoder_block = 4 * d + attn + ff;
    let cross_block = 6 * d + attn + ff;
    (cfg.d_text_in * d + d)
        + (cfg.d_patch_in * d + d)
        + (cfg.n_qformer_blocks + cfg.n_self_blocks) * encoder_block
        + cross_block
        + (d + 1)
}

/// Named parameter tensors in canonical order.
#[derive(Debug, Clone)]
pub struct TffParams {
    config: TffConfig,
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl TffParams {
    pub(crate) fn from_parts(config: TffConfig, named: Vec<(String, Tensor)>) -> Result<Self, TffError> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != named.len() {
            return Err(TffError::Checkpoint(format!(
                "{} tensors, configuration needs {}",
                named.len(),
                expected.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in expected.iter().zip(&named) {
            if name != got_name || *shape != t.shape() {
                return Err(TffError::Checkpoint(format!(
                    "tensor {got_name} {:?} where {name} {shape:?} was expected",
                    t.shape()
                )));
            }
        }
        let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let tensors = named.into_iter().map(|(_, t)| Arc::new(t)).collect();
        Ok(Self {
            config,
            names,
            tensors,
            index,
        })
    }

    pub fn config(&self) -> &TffConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Arc<Tensor>] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| self.tensors[i].as_ref())
    }

    pub(crate) fn position(&self, name: &str) -> usize {
        self.index[name]
    }

    /// Mutable access for optimizer updates; copies a tensor only if it is
    /// still shared with a live tape.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut().map(Arc::make_mut)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn bitwise_eq(&self, other: &TffParams) -> bool {
        self.config == other.config
            && self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bitwise_eq(b))
    }
}

/// Seeded Glorot-uniform weights, zero biases and shifts, unit gains.
pub fn init_params(config: &TffConfig) -> Result<TffParams, TffError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let named = layout(config)
        .into_iter()
        .map(|(name, (r, c), init)| {
            let t = match init {
                Init::Zeros => Tensor::zeros(r, c),
                Init::Ones => Tensor::filled(r, c, 1.0),
                Init::Glorot => {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    Tensor::from_fn(r, c, |_, _| rng.random_range(-limit..limit))
                }
            };
            (name, t)
        })
        .collect();
    TffParams::from_parts(*config, named)
}
