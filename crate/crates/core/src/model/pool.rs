use rand::Rng;

use super::{ModelError, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Self-attentive pooling: `s_i = u·tanh(W·E_i + b)`, softmax over the
/// unmasked positions, weighted sum of the rows.
#[derive(Debug, Clone, Copy)]
pub struct AttnPool {
    pub w: ParamId,
    pub b: ParamId,
    pub u: ParamId,
}

pub struct Pooled {
    /// `1 × H`.
    pub output: Var,
    /// `T × 1`, zero at masked positions.
    pub weights: Var,
}

impl AttnPool {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            w: store.xavier(&format!("{name}.w"), hidden, hidden, rng)?,
            b: store.zeros(&format!("{name}.b"), &[hidden])?,
            u: store.xavier(&format!("{name}.u"), hidden, 1, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, rows: Var, mask: Option<&[bool]>) -> Result<Pooled> {
        let t = g.value(rows).rows();
        if t == 0 || mask.is_some_and(|m| !m.iter().any(|&k| k)) {
            return Err(ModelError::Input("attention pooling over an empty set".into()));
        }
        if t == 1 {
            // softmax over a singleton
            let weights = g.input(crate::tensor::Tensor::new(&[1, 1], vec![1.0])?);
            return Ok(Pooled { output: rows, weights });
        }
        let w = g.param(self.w);
        let b = g.param(self.b);
        let u = g.param(self.u);
        let xw = g.matmul(rows, w)?;
        let pre = g.add_row(xw, b)?;
        let m = g.tanh(pre);
        let scores = g.matmul(m, u)?;
        let weights = g.softmax(scores, 0, mask)?;
        let wt = g.transpose(weights)?;
        let output = g.matmul(wt, rows)?;
        Ok(Pooled { output, weights })
    }
}

/// Pool a token range of `emb` (`T × H`); a single token is copied verbatim.
pub fn pool_range(g: &mut Graph, pool: &AttnPool, emb: Var, range: std::ops::Range<usize>) -> Result<Pooled> {
    if range.is_empty() {
        return Err(ModelError::Input("empty mention range".into()));
    }
    let rows = g.slice_rows(emb, range.start, range.len())?;
    pool.forward(g, rows, None)
}
