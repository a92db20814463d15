use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::tensor::{
    layer_norm, multi_head_attention, Archive, ArchiveEntry, Graph, LayerNormParams, Linear,
    MhaParams, ParamId, ParamStore, Tensor, Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub layer_norm: bool,
    /// Feed-forward width as a multiple of `hidden`.
    pub ffn_mult: usize,
    /// Number of lower layers (embeddings included as the first) kept frozen.
    pub freeze_depth: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            hidden: 64,
            layers: 2,
            heads: 4,
            max_len: 256,
            dropout: 0.1,
            layer_norm: true,
            ffn_mult: 4,
            freeze_depth: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    attn: MhaParams,
    ln1: Option<LayerNormParams>,
    ff1: Linear,
    ff2: Linear,
    ln2: Option<LayerNormParams>,
}

/// Token and learned position embeddings followed by post-norm transformer
/// blocks.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = config.hidden;
        if config.heads == 0 || h % config.heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden size {h} is not divisible by {} heads",
                config.heads
            )));
        }
        let tok_emb = store.normal("encoder.tok_emb", &[config.vocab_size, h], 0.5, rng)?;
        // Learned positions, initialized from the sinusoidal table.
        let mut pos = vec![0.0; config.max_len * h];
        for p in 0..config.max_len {
            for i in 0..h {
                let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / h as f64);
                let angle = p as f64 * rate;
                pos[p * h + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
        let pos_emb = store.insert("encoder.pos_emb", Tensor::new(&[config.max_len, h], pos)?)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let name = format!("encoder.layer{l}");
            let ln = |store: &mut ParamStore, which: &str| -> Result<Option<LayerNormParams>> {
                Ok(if config.layer_norm {
                    Some(LayerNormParams::new(store, &format!("{name}.{which}"), h)?)
                } else {
                    None
                })
            };
            blocks.push(Block {
                attn: MhaParams::new(store, &format!("{name}.attn"), h, config.heads, rng)?,
                ln1: ln(store, "ln1")?,
                ff1: Linear::new(store, &format!("{name}.ff1"), h, h * config.ffn_mult, true, rng)?,
                ff2: Linear::new(store, &format!("{name}.ff2"), h * config.ffn_mult, h, true, rng)?,
                ln2: ln(store, "ln2")?,
            });
        }
        let enc = Self {
            config,
            tok_emb,
            pos_emb,
            blocks,
        };
        enc.apply_freeze(store);
        Ok(enc)
    }

    fn apply_freeze(&self, store: &mut ParamStore) {
        let d = self.config.freeze_depth;
        if d == 0 {
            return;
        }
        for prefix in ["encoder.tok_emb", "encoder.pos_emb"] {
            store.freeze_prefix(prefix);
        }
        for l in 0..(d - 1).min(self.blocks.len()) {
            store.freeze_prefix(&format!("encoder.layer{l}."));
        }
    }

    /// Contextual embeddings, `T × hidden`.
    pub fn encode(&self, g: &mut Graph, ids: &[u32]) -> Result<Var> {
        let t = ids.len();
        if t == 0 {
            return Err(ModelError::Input("empty token sequence".into()));
        }
        if t > self.config.max_len {
            return Err(ModelError::Input(format!(
                "{t} tokens exceed the maximum length {}",
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(ModelError::Input(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let rate = self.config.dropout;
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let table = g.param(self.tok_emb);
        let tok = g.gather_rows(table, &idx)?;
        let pos_table = g.param(self.pos_emb);
        let pos = g.slice_rows(pos_table, 0, t)?;
        let x = g.add(tok, pos)?;
        let mut x = g.dropout(x, rate)?;
        for b in &self.blocks {
            let a = multi_head_attention(g, &b.attn, x, x, x, None, rate)?;
            let a = g.dropout(a.output, rate)?;
            let mut h = g.add(x, a)?;
            if let Some(ln) = &b.ln1 {
                h = layer_norm(g, h, ln)?;
            }
            let f = b.ff1.forward(g, h)?;
            let f = g.gelu(f);
            let f = b.ff2.forward(g, f)?;
            let f = g.dropout(f, rate)?;
            x = g.add(h, f)?;
            if let Some(ln) = &b.ln2 {
                x = layer_norm(g, x, ln)?;
            }
        }
        Ok(x)
    }
}

/// Frozen per-sample embeddings exported from an external language model.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    archive: Archive,
}

impl PrecomputedEmbeddings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            archive: Archive::load(path)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.archive.save(path)?)
    }

    pub fn insert(&mut self, sample_id: &str, tokens: Vec<String>, embeddings: &Tensor) -> Result<()> {
        if embeddings.shape().len() != 2 || embeddings.rows() != tokens.len() {
            return Err(ModelError::Alignment(format!(
                "{sample_id}: {} tokens for embeddings of shape {:?}",
                tokens.len(),
                embeddings.shape()
            )));
        }
        let mut e = ArchiveEntry::from_tensor(embeddings);
        e.tokens = Some(tokens);
        self.archive.insert(sample_id, e);
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.archive.entries.keys()
    }

    pub fn hidden(&self) -> Option<usize> {
        self.archive.entries.values().next().and_then(|e| e.shape.last().copied())
    }

    /// Embeddings for a sample. With `expected` given, the stored token
    /// strings must match it.
    pub fn get(&self, sample_id: &str, expected: Option<&[String]>) -> Result<Tensor> {
        let e = self
            .archive
            .entries
            .get(sample_id)
            .ok_or_else(|| ModelError::Lookup(sample_id.to_string()))?;
        if let (Some(want), Some(have)) = (expected, e.tokens.as_ref()) {
            if want != have.as_slice() {
                return Err(ModelError::Alignment(format!(
                    "{sample_id}: stored tokenization ({} tokens) differs from the local one ({} tokens)",
                    have.len(),
                    want.len()
                )));
            }
        }
        let t = e.to_tensor()?;
        if !t.is_finite() {
            return Err(ModelError::Alignment(format!("{sample_id}: non-finite embeddings")));
        }
        Ok(t)
    }

    pub fn tokens(&self, sample_id: &str) -> Option<&[String]> {
        self.archive.entries.get(sample_id)?.tokens.as_deref()
    }

    pub fn metadata_mut(&mut self) -> &mut serde_json::Map<String, serde_json::Value> {
        &mut self.archive.metadata
    }

    pub fn len(&self) -> usize {
        self.archive.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.archive.entries.is_empty()
    }
}
