//! Encoders and classification heads: the pronoun-only baseline and the
//! evidence-pooling classifier.

mod encoder;
mod grep;
mod pool;
mod trace;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TokenizedExample;
use crate::evidence::AlignedEvidence;
use crate::tensor::{
    rng, Archive, ArchiveEntry, ArchiveError, Graph, Linear, Mode, ParamStore, Tensor, TensorError, Var,
};

pub use encoder::{Encoder, EncoderConfig, PrecomputedEmbeddings};
pub use grep::{cascade, classify_grep, pool_hierarchy, CascadeOut, EpConfig, GrepParams, Hierarchy, Stage};
pub use pool::{pool_range, AttnPool, Pooled};
pub use trace::{EvidenceTrace, MentionTrace, ProviderTrace};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("no precomputed embeddings for sample {0:?}")]
    Lookup(String),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Probert,
    Grep,
}

impl std::str::FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "probert" => Ok(Self::Probert),
            "grep" => Ok(Self::Grep),
            other => Err(ModelError::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Probert => "probert",
            Self::Grep => "grep",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub ep: EpConfig,
    pub classifier_bias: bool,
    /// Read token embeddings from a precomputed archive instead of encoding.
    pub precomputed: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Grep,
            encoder: EncoderConfig::default(),
            ep: EpConfig::default(),
            classifier_bias: true,
            precomputed: false,
        }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        self.encoder.hidden
    }

    /// Stable hash of the serialized configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", rng::fnv1a(json.as_bytes()))
    }
}

/// One sample as the model sees it.
#[derive(Clone, Copy)]
pub struct ModelInput<'a> {
    pub tok: &'a TokenizedExample,
    pub evidence: &'a AlignedEvidence,
    pub embeddings: Option<&'a Tensor>,
}

struct ClusterVars {
    /// Mention index → stage-1 key row(s) and pooling weights.
    keys: Vec<(usize, Range, Option<Var>)>,
    null: bool,
    cascade: CascadeOut,
}

type Range = std::ops::Range<usize>;

/// Graph handles of one forward pass, read back by [`Model::trace`].
pub struct Forward {
    /// `1 × 3` over (A, B, NEITHER).
    pub probs: Var,
    clusters: Vec<ClusterVars>,
    hierarchy: Option<Hierarchy>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Option<Encoder>,
    pub mention_pool: AttnPool,
    pub probert: Option<Linear>,
    pub grep: Option<GrepParams>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, rng::Stream::Init);
        let mut store = ParamStore::new();
        let h = config.hidden();
        let encoder = if config.precomputed {
            None
        } else {
            Some(Encoder::new(&mut store, config.encoder.clone(), &mut r)?)
        };
        let mention_pool = AttnPool::new(&mut store, "mention_pool", h, &mut r)?;
        let (probert, grep) = match config.kind {
            ModelKind::Probert => (Some(Linear::new(&mut store, "probert.classifier", h, 3, config.classifier_bias, &mut r)?), None),
            ModelKind::Grep => (None, Some(GrepParams::new(&mut store, h, &config.ep, config.classifier_bias, &mut r)?)),
        };
        Ok(Self { config, store, encoder, mention_pool, probert, grep })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    /// Contextual token embeddings for a sample, `T × H`.
    pub fn embed(&self, g: &mut Graph, input: &ModelInput) -> Result<Var> {
        match (&self.encoder, input.embeddings) {
            (Some(enc), _) => enc.encode(g, &input.tok.ids()),
            (None, Some(e)) => {
                if e.shape() != [input.tok.len(), self.config.hidden()] {
                    return Err(ModelError::Alignment(format!(
                        "{}: embeddings of shape {:?} for {} tokens of width {}",
                        input.tok.id,
                        e.shape(),
                        input.tok.len(),
                        self.config.hidden()
                    )));
                }
                Ok(g.input(e.clone()))
            }
            (None, None) => Err(ModelError::Lookup(input.tok.id.clone())),
        }
    }

    fn entity_pool(&self) -> &AttnPool {
        self.grep
            .as_ref()
            .and_then(|p| p.entity_pool.as_ref())
            .unwrap_or(&self.mention_pool)
    }

    pub fn forward(&self, g: &mut Graph, input: &ModelInput) -> Result<Forward> {
        let emb = self.embed(g, input)?;
        let [rp, ra, rb] = input.tok.mentions.clone();
        let e_p = pool_range(g, self.entity_pool(), emb, rp)?.output;
        let Some(p) = &self.grep else {
            let e_p = g.dropout(e_p, self.config.encoder.dropout)?;
            let w = self.probert.as_ref().expect("probert head");
            let logits = w.forward(g, e_p)?;
            let probs = g.softmax(logits, 1, None)?;
            return Ok(Forward { probs, clusters: Vec::new(), hierarchy: None });
        };
        let cfg = &self.config.ep;
        let a_a = pool_range(g, self.entity_pool(), emb, ra)?.output;
        let a_b = pool_range(g, self.entity_pool(), emb, rb)?.output;

        let mut clusters = Vec::with_capacity(input.evidence.clusters.len());
        for c in &input.evidence.clusters {
            let mut keys = Vec::new();
            let mut rows = Vec::new();
            let mut n = 0;
            for (i, r) in c.ranges.iter().enumerate() {
                let Some(r) = r else { continue };
                if cfg.raw_token_keys {
                    rows.push(g.slice_rows(emb, r.start, r.len())?);
                    keys.push((i, n..n + r.len(), None));
                    n += r.len();
                } else {
                    let pooled = pool_range(g, &self.mention_pool, emb, r.clone())?;
                    keys.push((i, n..n + 1, Some(pooled.weights)));
                    rows.push(pooled.output);
                    n += 1;
                }
            }
            let null = rows.is_empty();
            let a_n = if null {
                g.param(p.null_mention)
            } else if rows.len() == 1 {
                rows[0]
            } else {
                g.concat_rows(&rows)?
            };
            let cascade = cascade(g, &p.stages, e_p, a_a, a_b, a_n, None, cfg)?;
            clusters.push(ClusterVars { keys, null, cascade });
        }
        let c_bs: Vec<Var> = clusters.iter().map(|c| c.cascade.c_b).collect();
        let hierarchy = pool_hierarchy(g, p, &c_bs, self.config.hidden())?;
        let e_p = g.dropout(e_p, cfg.dropout)?;
        let a_co = g.dropout(hierarchy.a_co, cfg.dropout)?;
        let probs = classify_grep(g, &p.classifier, e_p, a_co)?;
        Ok(Forward { probs, clusters, hierarchy: Some(hierarchy) })
    }

    /// Forward every input in one graph; probabilities stacked `B × 3`.
    pub fn forward_batch(&self, g: &mut Graph, inputs: &[ModelInput]) -> Result<(Var, Vec<Forward>)> {
        let outs = inputs.iter().map(|i| self.forward(g, i)).collect::<Result<Vec<_>>>()?;
        let rows: Vec<Var> = outs.iter().map(|f| f.probs).collect();
        let probs = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
        Ok((probs, outs))
    }

    /// Evaluation-mode probabilities over (A, B, NEITHER).
    pub fn predict(&self, input: &ModelInput) -> Result<[f64; 3]> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let f = self.forward(&mut g, input)?;
        Ok(probs_of(&g, f.probs))
    }

    /// Evaluation-mode probabilities plus the evidence trace.
    pub fn predict_traced(&self, input: &ModelInput) -> Result<EvidenceTrace> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let f = self.forward(&mut g, input)?;
        Ok(self.trace(&g, input, &f))
    }

    pub fn trace(&self, g: &Graph, input: &ModelInput, f: &Forward) -> EvidenceTrace {
        let vec = |v: Var| g.value(v).data().to_vec();
        let provider_w: Vec<f64> = f
            .hierarchy
            .as_ref()
            .and_then(|h| h.provider_weights)
            .map(vec)
            .unwrap_or_default();
        let mut providers = Vec::new();
        for (k, (cv, c)) in f.clusters.iter().zip(&input.evidence.clusters).enumerate() {
            let heads = &cv.cascade.key_weights;
            let key_w: Vec<f64> = if heads.is_empty() {
                Vec::new()
            } else {
                let n = g.value(heads[0]).numel();
                (0..n)
                    .map(|j| heads.iter().map(|&h| g.value(h).data()[j]).sum::<f64>() / heads.len() as f64)
                    .collect()
            };
            let mentions = c
                .spans
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let found = cv.keys.iter().find(|(m, _, _)| *m == i);
                    MentionTrace {
                        offset: s.offset,
                        length: s.length,
                        weight: found.filter(|_| !cv.null).map(|(_, r, _)| key_w[r.clone()].iter().sum()),
                        token_weights: found.and_then(|(_, _, w)| w.map(vec)).unwrap_or_default(),
                    }
                })
                .collect();
            let cluster_weight = f
                .hierarchy
                .as_ref()
                .map(|h| g.value(h.cluster_weights[k]).data().iter().sum())
                .unwrap_or(1.0);
            providers.push(ProviderTrace {
                provider: c.provider.clone(),
                mentions,
                null_mention: cv.null,
                cluster_weight,
                provider_weight: provider_w.get(k).copied().unwrap_or(1.0),
                c_p: vec(cv.cascade.c_p),
                c_a: vec(cv.cascade.c_a),
                c_b: vec(cv.cascade.c_b),
            });
        }
        EvidenceTrace {
            sample_id: input.tok.id.clone(),
            probs: probs_of(g, f.probs),
            providers,
            a_co: f.hierarchy.as_ref().map(|h| vec(h.a_co)).unwrap_or_default(),
        }
    }

    pub fn to_archive(&self, metadata: serde_json::Map<String, serde_json::Value>) -> Archive {
        let mut a = Archive::new();
        a.metadata = metadata;
        a.metadata.insert("config".into(), serde_json::to_value(&self.config).expect("config serializes"));
        a.metadata.insert("config_hash".into(), self.config.hash().into());
        for (_, p) in self.store.iter() {
            a.insert(p.name(), ArchiveEntry::from_tensor(p.tensor()));
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let config: ModelConfig = a
            .metadata
            .get("config")
            .cloned()
            .ok_or_else(|| ModelError::Checkpoint("missing config record".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| ModelError::Checkpoint(e.to_string())))?;
        if let Some(h) = a.metadata.get("config_hash").and_then(|v| v.as_str()) {
            if h != config.hash() {
                return Err(ModelError::Checkpoint(format!("config hash {h} does not match its config")));
            }
        }
        let mut model = Model::new(config, 0)?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = model.store.get(id).name().to_string();
            let e = a
                .entries
                .get(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            let t = e.to_tensor()?;
            let slot = model.store.get_mut(id).tensor_mut();
            if t.shape() != slot.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name}: shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, metadata: serde_json::Map<String, serde_json::Value>) -> Result<()> {
        Ok(self.to_archive(metadata).save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

pub fn probs_of(g: &Graph, probs: Var) -> [f64; 3] {
    let d = g.value(probs).data();
    [d[0], d[1], d[2]]
}
