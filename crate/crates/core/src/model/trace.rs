use serde::{Deserialize, Serialize};

use crate::evidence::Span;

/// Per-sample record of the evidence-pooling attention, for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTrace {
    pub sample_id: String,
    pub probs: [f64; 3],
    pub providers: Vec<ProviderTrace>,
    pub a_co: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderTrace {
    pub provider: String,
    pub mentions: Vec<MentionTrace>,
    /// The cluster had no usable mention and the null vector stood in.
    pub null_mention: bool,
    pub cluster_weight: f64,
    pub provider_weight: f64,
    pub c_p: Vec<f64>,
    pub c_a: Vec<f64>,
    pub c_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionTrace {
    pub offset: usize,
    pub length: usize,
    /// Stage-1 attention (mean over heads); `None` for dropped mentions.
    pub weight: Option<f64>,
    /// Mention-level pooling weights over the mention's tokens.
    pub token_weights: Vec<f64>,
}

impl MentionTrace {
    pub fn span(&self) -> Span {
        Span::new(self.offset, self.length)
    }
}

impl EvidenceTrace {
    /// Largest deviation from 1 among the weight groups that should be
    /// probability vectors.
    pub fn max_normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut check = |s: f64| worst = worst.max((s - 1.0).abs());
        check(self.probs.iter().sum());
        if !self.providers.is_empty() {
            check(self.providers.iter().map(|p| p.provider_weight).sum());
        }
        for p in &self.providers {
            check(p.cluster_weight);
            if !p.null_mention {
                check(p.mentions.iter().filter_map(|m| m.weight).sum());
            }
            for m in p.mentions.iter().filter(|m| m.weight.is_some() && !m.token_weights.is_empty()) {
                check(m.token_weights.iter().sum());
            }
        }
        worst
    }
}
