//! Answer predictor `p(Y | T, X)`.
//!
//! Token, role and step embeddings feed one multi-head self-attention block
//! (attention plus a position-wise GELU feed-forward layer, both residual),
//! followed by mean pooling and a two-layer GELU head over the answer
//! vocabulary. Gradients are computed by a hand-written reverse pass; the
//! tests compare them against central finite differences.

mod dist;
pub mod linalg;
mod network;
pub mod optim;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dist::{predict, AnswerDistribution};
pub use network::{ForwardCache, ForwardPass};

use crate::taskgen::hex;
use crate::trace::{Role, TokenSequence, Vocab};
use crate::train::LossSpec;
use crate::{rng, Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_hidden: usize,
    /// Token vocabulary size; filled from the dataset vocabulary.
    pub vocab_size: usize,
    pub answer_vocab: usize,
    pub max_steps: usize,
    pub init_seed: u64,
    pub init_scale: f64,
    /// Number of leading embedding dimensions of each number token that are
    /// initialised with value features (a ramp, then sine/cosine pairs)
    /// instead of noise. 0 disables.
    pub numeric_init_dims: usize,
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            d_hidden: 128,
            vocab_size: 0,
            answer_vocab: 128,
            max_steps: 5,
            init_seed: 0,
            init_scale: 1.0,
            numeric_init_dims: 0,
            epsilon: 1e-8,
        }
    }
}

impl ModelConfig {
    /// Copies the vocabulary-dependent sizes from `vocab`.
    pub fn for_vocab(mut self, vocab: &Vocab) -> Self {
        self.vocab_size = vocab.size();
        self.answer_vocab = vocab.answer_vocab as usize;
        self.max_steps = vocab.max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.numeric_init_dims > self.d_model {
            return Err(Error::Config("numeric_init_dims exceeds d_model".into()));
        }
        if self.vocab_size == 0 || self.answer_vocab < 2 || self.d_ff == 0 || self.d_hidden == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon * (self.answer_vocab as f64) < 1.0) {
            return Err(Error::Config(format!("epsilon {} too large", self.epsilon)));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("serializes")))
    }
}

/// Location of one named parameter array inside the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub name: &'static str,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: Slot,
    pub role_emb: Slot,
    pub step_emb: Slot,
    pub wq: Slot,
    pub wk: Slot,
    pub wv: Slot,
    pub wo: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
    pub wh1: Slot,
    pub bh1: Slot,
    pub wh2: Slot,
    pub bh2: Slot,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut offset = 0;
        let mut slot = |name: &'static str, rows: usize, cols: usize| {
            let s = Slot {
                name,
                offset,
                rows,
                cols,
            };
            offset += rows * cols;
            s
        };
        let d = c.d_model;
        let tok_emb = slot("tok_emb", c.vocab_size, d);
        let role_emb = slot("role_emb", Role::COUNT, d);
        let step_emb = slot("step_emb", c.max_steps + 1, d);
        let wq = slot("wq", d, d);
        let wk = slot("wk", d, d);
        let wv = slot("wv", d, d);
        let wo = slot("wo", d, d);
        let w1 = slot("w1", d, c.d_ff);
        let b1 = slot("b1", 1, c.d_ff);
        let w2 = slot("w2", c.d_ff, d);
        let b2 = slot("b2", 1, d);
        let wh1 = slot("wh1", d, c.d_hidden);
        let bh1 = slot("bh1", 1, c.d_hidden);
        let wh2 = slot("wh2", c.d_hidden, c.answer_vocab);
        let bh2 = slot("bh2", 1, c.answer_vocab);
        Self {
            tok_emb,
            role_emb,
            step_emb,
            wq,
            wk,
            wv,
            wo,
            w1,
            b1,
            w2,
            b2,
            wh1,
            bh1,
            wh2,
            bh2,
            total: offset,
        }
    }

    pub fn slots(&self) -> [Slot; 15] {
        [
            self.tok_emb,
            self.role_emb,
            self.step_emb,
            self.wq,
            self.wk,
            self.wv,
            self.wo,
            self.w1,
            self.b1,
            self.w2,
            self.b2,
            self.wh1,
            self.bh1,
            self.wh2,
            self.bh2,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

/// Gradients laid out exactly like [`ModelParams::data`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub data: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }

    pub fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self {
            data: vec![0.0; layout.total],
            config,
            layout,
        })
    }

    /// Uniform Glorot initialisation for weight matrices, small uniform
    /// embeddings, zero biases.
    pub fn init(config: ModelConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut r = rng::stream(p.config.init_seed, 0x1417);
        let scale = p.config.init_scale;
        let emb = 0.5 * scale;
        for slot in p.layout.slots() {
            let bound = match slot.name {
                "tok_emb" | "role_emb" | "step_emb" => emb,
                n if n.starts_with('b') => 0.0,
                _ => scale * (6.0 / (slot.rows + slot.cols) as f64).sqrt(),
            };
            if bound > 0.0 {
                for v in &mut p.data[slot.range()] {
                    *v = r.gen_range(-bound..bound);
                }
            }
        }
        p.init_numeric_embeddings();
        Ok(p)
    }

    /// Overwrites the leading dimensions of every number token's embedding
    /// with value features so magnitudes start out ordered.
    fn init_numeric_embeddings(&mut self) {
        let k = self.config.numeric_init_dims;
        if k == 0 {
            return;
        }
        let v = self.config.answer_vocab;
        let vocab = Vocab::new(v as u32, self.config.max_steps);
        let d = self.config.d_model;
        let scale = 0.5 * self.config.init_scale;
        for value in 0..v {
            let row = self.layout.tok_emb.offset + vocab.num(value as u32) as usize * d;
            let x = value as f64;
            let mut feats = vec![scale * (2.0 * x / (v - 1).max(1) as f64 - 1.0)];
            let mut period = 2.0 * v as f64;
            while feats.len() < k {
                let w = std::f64::consts::TAU / period;
                feats.push(scale * (w * x).sin());
                feats.push(scale * (w * x).cos());
                period /= 2.0;
            }
            self.data[row..row + k].copy_from_slice(&feats[..k]);
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, slot: Slot) -> &[f64] {
        &self.data[slot.range()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            arrays: self
                .layout
                .slots()
                .iter()
                .map(|s| NamedArray {
                    name: s.name.to_string(),
                    shape: [s.rows, s.cols],
                    data: self.slice(*s).to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        if ck.config.hash() != ck.config_hash {
            return Err(Error::Malformed("checkpoint config hash mismatch".into()));
        }
        let mut p = Self::zeros(ck.config.clone())?;
        for slot in p.layout.slots() {
            let arr = ck
                .arrays
                .iter()
                .find(|a| a.name == slot.name)
                .ok_or_else(|| Error::Malformed(format!("checkpoint lacks {}", slot.name)))?;
            if arr.shape != [slot.rows, slot.cols] || arr.data.len() != slot.len() {
                return Err(Error::Malformed(format!("shape mismatch for {}", slot.name)));
            }
            p.data[slot.range()].copy_from_slice(&arr.data);
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.to_checkpoint())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::from_checkpoint(&ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Versioned on-disk model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: ModelConfig,
    pub arrays: Vec<NamedArray>,
}

/// Answer distribution at temperature `temperature`.
pub fn forward(params: &ModelParams, seq: &TokenSequence, temperature: f64) -> Result<AnswerDistribution> {
    Ok(ForwardPass::run(params, seq, temperature)?.dist)
}

/// Loss value and its gradient with respect to every parameter.
pub fn backward(params: &ModelParams, seq: &TokenSequence, spec: &LossSpec<'_>) -> Result<(f64, GradientBundle)> {
    let mut grads = GradientBundle::zeros(params.len());
    let loss = spec.accumulate(params, seq, &mut grads)?;
    Ok((loss, grads))
}
