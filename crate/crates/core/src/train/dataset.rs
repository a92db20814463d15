use crate::data::{tokenize, GapSample, TokenizedExample, Vocab};
use crate::evidence::{align_evidence, AlignedEvidence, EvidenceSet};
use crate::model::{ModelInput, PrecomputedEmbeddings};
use crate::tensor::Tensor;

use super::Result;

/// A tokenized sample with its aligned evidence, ready for the model.
#[derive(Debug, Clone)]
pub struct Example {
    pub tok: TokenizedExample,
    pub evidence: AlignedEvidence,
    pub embeddings: Option<Tensor>,
}

impl Example {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            tok: &self.tok,
            evidence: &self.evidence,
            embeddings: self.embeddings.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrepareReport {
    /// Samples skipped, with the reason.
    pub quarantined: Vec<(String, String)>,
    pub dropped_mentions: usize,
}

/// Tokenize, align evidence and attach precomputed embeddings. Samples that
/// cannot be tagged or windowed are skipped and reported.
pub fn prepare_examples(
    samples: &[GapSample],
    vocab: &Vocab,
    max_len: usize,
    evidence: Option<&EvidenceSet>,
    keep_pronoun: bool,
    embeddings: Option<&PrecomputedEmbeddings>,
) -> Result<(Vec<Example>, PrepareReport)> {
    let mut report = PrepareReport::default();
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let tok = match tokenize(s, vocab, max_len) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("skipping {}: {e}", s.id);
                report.quarantined.push((s.id.clone(), e.to_string()));
                continue;
            }
        };
        let ev = match evidence {
            Some(set) => align_evidence(set.get(&s.id), s, &tok, keep_pronoun),
            None => AlignedEvidence::default(),
        };
        report.dropped_mentions += ev.dropped;
        let emb = match embeddings {
            Some(pre) => Some(pre.get(&s.id, None)?),
            None => None,
        };
        out.push(Example { tok, evidence: ev, embeddings: emb });
    }
    Ok((out, report))
}
