use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pool::AttnPool;
use super::Result;
use crate::tensor::{multi_head_attention, Graph, Linear, MhaParams, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpConfig {
    pub heads: usize,
    pub dropout: f64,
    /// One mention-level pooling set for cluster mentions and P/A/B.
    pub shared_mention_pool: bool,
    /// Stages 2 and 3 attend over `[previous stage; cluster mentions]`.
    pub reattend: bool,
    /// Stage 1 keys are the raw tokens of all cluster mentions.
    pub raw_token_keys: bool,
    /// Keep cluster mentions that overlap the labeled pronoun.
    pub keep_pronoun: bool,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            dropout: 0.1,
            shared_mention_pool: true,
            reattend: false,
            raw_token_keys: false,
            keep_pronoun: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Stage {
    pub attn: MhaParams,
    pub ffn: Linear,
}

#[derive(Debug, Clone)]
pub struct GrepParams {
    /// P/A/B pooling when not shared with the mention pool.
    pub entity_pool: Option<AttnPool>,
    pub cluster_pool: AttnPool,
    pub provider_pool: AttnPool,
    pub stages: [Stage; 3],
    pub null_mention: ParamId,
    pub classifier: Linear,
}

impl GrepParams {
    pub fn new(store: &mut ParamStore, hidden: usize, cfg: &EpConfig, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        let entity_pool = if cfg.shared_mention_pool {
            None
        } else {
            Some(AttnPool::new(store, "ep.entity_pool", hidden, rng)?)
        };
        let mut stage = |name: &str| -> Result<Stage> {
            Ok(Stage {
                attn: MhaParams::new(store, &format!("ep.{name}.attn"), hidden, cfg.heads, rng)?,
                ffn: Linear::new(store, &format!("ep.{name}.ffn"), hidden, hidden, true, rng)?,
            })
        };
        let stages = [stage("stage_p")?, stage("stage_a")?, stage("stage_b")?];
        Ok(Self {
            entity_pool,
            stages,
            cluster_pool: AttnPool::new(store, "ep.cluster_pool", hidden, rng)?,
            provider_pool: AttnPool::new(store, "ep.provider_pool", hidden, rng)?,
            null_mention: store.normal("ep.null_mention", &[1, hidden], 0.1, rng)?,
            classifier: Linear::new(store, "ep.classifier", 2 * hidden, 3, bias, rng)?,
        })
    }
}

pub struct CascadeOut {
    pub c_p: Var,
    pub c_a: Var,
    pub c_b: Var,
    /// Stage-1 attention over the keys, one `1 × T_n` matrix per head.
    pub key_weights: Vec<Var>,
}

/// Three query-conditioned transformer stages: P attends over the cluster,
/// then A over the result, then B. Each stage is `tanh(W·MultiHead + b)`.
#[allow(clippy::too_many_arguments)]
pub fn cascade(
    g: &mut Graph,
    stages: &[Stage; 3],
    a_p: Var,
    a_a: Var,
    a_b: Var,
    a_n: Var,
    mask: Option<&[bool]>,
    cfg: &EpConfig,
) -> Result<CascadeOut> {
    let run = |g: &mut Graph, s: &Stage, q: Var, kv: Var, mask: Option<&[bool]>| -> Result<(Var, Vec<Var>)> {
        let a = multi_head_attention(g, &s.attn, q, kv, kv, mask, cfg.dropout)?;
        let y = s.ffn.forward(g, a.output)?;
        Ok((g.tanh(y), a.weights))
    };
    let (c_p, key_weights) = run(g, &stages[0], a_p, a_n, mask)?;
    let (c_a, c_b) = if cfg.reattend {
        let ext: Option<Vec<bool>> = mask.map(|m| std::iter::once(true).chain(m.iter().copied()).collect());
        let kv = g.concat_rows(&[c_p, a_n])?;
        let (c_a, _) = run(g, &stages[1], a_a, kv, ext.as_deref())?;
        let kv = g.concat_rows(&[c_a, a_n])?;
        let (c_b, _) = run(g, &stages[2], a_b, kv, ext.as_deref())?;
        (c_a, c_b)
    } else {
        let (c_a, _) = run(g, &stages[1], a_a, c_p, None)?;
        let (c_b, _) = run(g, &stages[2], a_b, c_a, None)?;
        (c_a, c_b)
    };
    Ok(CascadeOut { c_p, c_a, c_b, key_weights })
}

pub struct Hierarchy {
    pub a_co: Var,
    /// One `T × 1` weight vector per provider from the cluster-level pool.
    pub cluster_weights: Vec<Var>,
    /// `N × 1`, absent when there are no providers.
    pub provider_weights: Option<Var>,
}

/// Cluster-level pool of each provider's cascade output, then provider-level
/// pool across providers. No providers gives the zero vector.
pub fn pool_hierarchy(g: &mut Graph, p: &GrepParams, c_bs: &[Var], hidden: usize) -> Result<Hierarchy> {
    if c_bs.is_empty() {
        let a_co = g.input(Tensor::zeros(&[1, hidden]));
        return Ok(Hierarchy { a_co, cluster_weights: Vec::new(), provider_weights: None });
    }
    let mut rows = Vec::with_capacity(c_bs.len());
    let mut cluster_weights = Vec::with_capacity(c_bs.len());
    for &c in c_bs {
        let pooled = p.cluster_pool.forward(g, c, None)?;
        rows.push(pooled.output);
        cluster_weights.push(pooled.weights);
    }
    let stacked = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
    let top = p.provider_pool.forward(g, stacked, None)?;
    Ok(Hierarchy {
        a_co: top.output,
        cluster_weights,
        provider_weights: Some(top.weights),
    })
}

/// `softmax(Wᵀ[E_p; A_co] + b)`, `1 × 3`.
pub fn classify_grep(g: &mut Graph, classifier: &Linear, e_p: Var, a_co: Var) -> Result<Var> {
    let c = g.concat_cols(&[e_p, a_co])?;
    let logits = classifier.forward(g, c)?;
    Ok(g.softmax(logits, 1, None)?)
}
