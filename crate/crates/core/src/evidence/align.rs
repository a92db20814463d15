use std::ops::Range;

use super::{EvidenceCluster, Span};
use crate::data::{char_to_byte, GapSample, TokenizedExample};

/// One provider's cluster as window-relative token ranges. `ranges[i]` is
/// `None` when mention `i` was dropped (outside the window) or excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedCluster {
    pub provider: String,
    pub spans: Vec<Span>,
    pub ranges: Vec<Option<Range<usize>>>,
    pub dropped: usize,
}

impl AlignedCluster {
    pub fn mask(&self) -> Vec<bool> {
        self.ranges.iter().map(Option::is_some).collect()
    }

    pub fn valid(&self) -> impl Iterator<Item = &Range<usize>> {
        self.ranges.iter().flatten()
    }

    pub fn num_valid(&self) -> usize {
        self.ranges.iter().flatten().count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignedEvidence {
    pub clusters: Vec<AlignedCluster>,
    pub dropped: usize,
}

/// Map each mention to the minimal covering token range of the window.
/// With `keep_pronoun` off, mentions overlapping the labeled pronoun are
/// excluded (not counted as drops).
pub fn align_cluster_tokens(
    cluster: &EvidenceCluster,
    sample: &GapSample,
    tok: &TokenizedExample,
    keep_pronoun: bool,
) -> AlignedCluster {
    let pronoun = Span::new(sample.pronoun.offset, sample.pronoun.char_len());
    let mut dropped = 0;
    let ranges = cluster
        .mentions
        .iter()
        .map(|m| {
            if !keep_pronoun && m.overlaps(&pronoun) {
                return None;
            }
            let bytes = char_to_byte(&sample.text, m.offset)
                .zip(char_to_byte(&sample.text, m.end()))
                .map(|(lo, hi)| tok.tagged.map_range(lo..hi));
            let r = bytes.and_then(|b| tok.token_range(b));
            if r.is_none() {
                dropped += 1;
            }
            r
        })
        .collect();
    AlignedCluster {
        provider: cluster.provider.clone(),
        spans: cluster.mentions.clone(),
        ranges,
        dropped,
    }
}

pub fn align_evidence(
    clusters: &[EvidenceCluster],
    sample: &GapSample,
    tok: &TokenizedExample,
    keep_pronoun: bool,
) -> AlignedEvidence {
    let clusters: Vec<AlignedCluster> = clusters
        .iter()
        .map(|c| align_cluster_tokens(c, sample, tok, keep_pronoun))
        .collect();
    let dropped = clusters.iter().map(|c| c.dropped).sum();
    AlignedEvidence { clusters, dropped }
}
