use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::{Result, TensorError};

/// `tanh(x·W + b)` with `x: T×in`, `W: in×out`, `b: out`.
pub fn tanh_affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let pre = g.add_row(xw, b)?;
    Ok(g.tanh(pre))
}

/// Mean negative log-likelihood of `gold` under row-stochastic `probs`.
pub fn cross_entropy(g: &mut Graph, probs: Var, gold: &[usize]) -> Result<Var> {
    let p = g.value(probs);
    let cols = p.cols();
    for r in 0..p.rows() {
        let s: f64 = p.data()[r * cols..(r + 1) * cols].iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(TensorError::InvalidArgument(format!(
                "probability row {r} sums to {s}"
            )));
        }
    }
    g.neg_log_pick(probs, gold)
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.xavier(&format!("{name}.w"), fan_in, fan_out, rng)?;
        let b = if bias {
            Some(store.zeros(&format!("{name}.b"), &[fan_out])?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.ones(&format!("{name}.gamma"), &[width])?,
            beta: store.zeros(&format!("{name}.beta"), &[width])?,
        })
    }
}

pub fn layer_norm(g: &mut Graph, x: Var, p: &LayerNormParams) -> Result<Var> {
    let gamma = g.param(p.gamma);
    let beta = g.param(p.beta);
    g.layer_norm(x, gamma, beta, 1e-12)
}

/// Query/key/value/output projections of one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct MhaParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MhaParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(TensorError::Config(format!(
                "hidden size {hidden} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), hidden, hidden, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), hidden, hidden, true, rng)?,
            v: Linear::new(store, &format!("{name}.v"), hidden, hidden, true, rng)?,
            o: Linear::new(store, &format!("{name}.o"), hidden, hidden, true, rng)?,
            heads,
        })
    }
}

pub struct AttentionOutput {
    pub output: Var,
    /// One `Tq×Tk` weight matrix per head, before dropout.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention over `heads` column blocks, concatenated and
/// output-projected. `key_mask` has one flag per key row. No positional
/// information is added here, so the result is invariant to permuting the
/// key/value rows together with the mask.
pub fn multi_head_attention(
    g: &mut Graph,
    p: &MhaParams,
    query: Var,
    key: Var,
    value: Var,
    key_mask: Option<&[bool]>,
    attn_dropout: f64,
) -> Result<AttentionOutput> {
    let hidden = g.value(query).cols();
    if p.heads == 0 || hidden % p.heads != 0 {
        return Err(TensorError::Config(format!(
            "hidden size {hidden} is not divisible by {} heads",
            p.heads
        )));
    }
    if g.value(key).rows() != g.value(value).rows() {
        return Err(TensorError::Shape {
            op: "multi_head_attention",
            lhs: g.shape(key).to_vec(),
            rhs: g.shape(value).to_vec(),
        });
    }
    if let Some(m) = key_mask {
        if m.len() != g.value(key).rows() {
            return Err(TensorError::Shape {
                op: "attention mask",
                lhs: g.shape(key).to_vec(),
                rhs: vec![m.len()],
            });
        }
    }
    let head_dim = hidden / p.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let q = p.q.forward(g, query)?;
    let k = p.k.forward(g, key)?;
    let v = p.v.forward(g, value)?;

    let mut outs = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * head_dim, head_dim)?,
                g.slice_cols(k, h * head_dim, head_dim)?,
                g.slice_cols(v, h * head_dim, head_dim)?,
            )
        };
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale);
        let w = g.softmax(scores, 1, key_mask)?;
        weights.push(w);
        let wd = g.dropout(w, attn_dropout)?;
        outs.push(g.matmul(wd, vh)?);
    }
    let cat = g.concat_cols(&outs)?;
    let output = p.o.forward(g, cat)?;
    Ok(AttentionOutput { output, weights })
}
