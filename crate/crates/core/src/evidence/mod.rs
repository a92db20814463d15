//! Coreference evidence: the cluster interchange format, stand-in providers
//! and alignment of cluster mentions to token positions.

mod align;
mod providers;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::GapSample;

pub use align::{align_cluster_tokens, align_evidence, AlignedCluster, AlignedEvidence};
pub use providers::{
    implied_label, run_providers, Corrupt, Heuristic, Oracle, Provider, ProviderInput,
};

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("provider {provider}: sample {sample_id} has no gold clusters")]
    NoGold { provider: String, sample_id: String },
    #[error("flip rate {0} outside [0, 1]")]
    Rate(f64),
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
}

pub type Result<T, E = EvidenceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    /// Character offset into the untagged sample text.
    pub offset: usize,
    /// Length in characters.
    pub length: usize,
}

impl Span {
    pub fn new(offset: usize, length: usize) -> Self {
        Self { offset, length }
    }

    pub fn end(&self) -> usize {
        self.offset + self.length
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.offset < other.end() && other.offset < self.end()
    }
}

/// One provider's mentions predicted coreferent with a sample's pronoun.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceCluster {
    pub sample_id: String,
    pub provider: String,
    pub mentions: Vec<Span>,
}

impl EvidenceCluster {
    /// Mentions are sorted and deduplicated.
    pub fn new(sample_id: &str, provider: &str, mut mentions: Vec<Span>) -> Self {
        mentions.sort_unstable();
        mentions.dedup();
        Self {
            sample_id: sample_id.to_string(),
            provider: provider.to_string(),
            mentions,
        }
    }
}

/// Clusters grouped by sample, in a fixed provider order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceSet {
    pub providers: Vec<String>,
    by_sample: HashMap<String, Vec<EvidenceCluster>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    pub dropped_spans: usize,
    pub duplicates: usize,
    pub unknown_samples: usize,
    pub skipped_providers: usize,
}

impl EvidenceSet {
    pub fn new(providers: Vec<String>) -> Self {
        Self {
            providers,
            by_sample: HashMap::new(),
        }
    }

    /// Insert a cluster; an existing (sample, provider) entry is replaced.
    pub fn insert(&mut self, cluster: EvidenceCluster) -> bool {
        if !self.providers.contains(&cluster.provider) {
            self.providers.push(cluster.provider.clone());
        }
        let order = &self.providers;
        let list = self.by_sample.entry(cluster.sample_id.clone()).or_default();
        let replaced = match list.iter_mut().find(|c| c.provider == cluster.provider) {
            Some(slot) => {
                *slot = cluster;
                true
            }
            None => {
                list.push(cluster);
                false
            }
        };
        list.sort_by_key(|c| order.iter().position(|p| *p == c.provider));
        replaced
    }

    /// Clusters for a sample in provider order; empty when absent.
    pub fn get(&self, sample_id: &str) -> &[EvidenceCluster] {
        self.by_sample.get(sample_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn num_samples(&self) -> usize {
        self.by_sample.len()
    }

    pub fn len(&self) -> usize {
        self.by_sample.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keep only the listed providers, in the listed order.
    pub fn select(&self, providers: &[String]) -> Result<EvidenceSet> {
        let mut out = EvidenceSet::new(providers.to_vec());
        for c in self.by_sample.values().flatten() {
            if providers.contains(&c.provider) {
                out.insert(c.clone());
            }
        }
        Ok(out)
    }

    /// Canonical JSON lines: samples by id, providers in set order.
    pub fn to_jsonl(&self) -> String {
        let sorted: BTreeMap<&String, &Vec<EvidenceCluster>> = self.by_sample.iter().collect();
        let mut out = String::new();
        for clusters in sorted.values() {
            for c in clusters.iter() {
                out.push_str(&serde_json::to_string(c).expect("cluster serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| io_err(path, e))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> EvidenceError {
    EvidenceError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_evidence(
    path: &Path,
    samples: &[GapSample],
    providers: Option<&[String]>,
) -> Result<(EvidenceSet, LoadReport)> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_evidence(&raw, samples, providers)
}

/// Parse evidence JSON lines. Spans outside the sample text are dropped with
/// a warning; a repeated (sample, provider) line replaces the earlier one.
/// With `providers` given, other providers are skipped and the given order
/// is used; otherwise providers are ordered by name.
pub fn parse_evidence(
    raw: &str,
    samples: &[GapSample],
    providers: Option<&[String]>,
) -> Result<(EvidenceSet, LoadReport)> {
    let lengths: HashMap<&str, usize> = samples
        .iter()
        .map(|s| (s.id.as_str(), s.text.chars().count()))
        .collect();
    let mut report = LoadReport::default();
    let mut clusters = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let c: EvidenceCluster =
            serde_json::from_str(line).map_err(|e| EvidenceError::Json { line: i + 1, source: e })?;
        if providers.is_some_and(|p| !p.contains(&c.provider)) {
            report.skipped_providers += 1;
            continue;
        }
        let Some(&len) = lengths.get(c.sample_id.as_str()) else {
            log::warn!("line {}: unknown sample {}", i + 1, c.sample_id);
            report.unknown_samples += 1;
            continue;
        };
        let before = c.mentions.len();
        let kept: Vec<Span> = c
            .mentions
            .into_iter()
            .filter(|m| m.length > 0 && m.end() <= len)
            .collect();
        if kept.len() < before {
            log::warn!(
                "line {}: dropped {} out-of-bounds span(s) for {}",
                i + 1,
                before - kept.len(),
                c.sample_id
            );
            report.dropped_spans += before - kept.len();
        }
        clusters.push((i + 1, EvidenceCluster::new(&c.sample_id, &c.provider, kept)));
    }
    let order: Vec<String> = match providers {
        Some(p) => p.to_vec(),
        None => {
            let mut names: Vec<String> = clusters.iter().map(|(_, c)| c.provider.clone()).collect();
            names.sort();
            names.dedup();
            names
        }
    };
    let mut set = EvidenceSet::new(order);
    for (line, c) in clusters {
        let (sid, prov) = (c.sample_id.clone(), c.provider.clone());
        if set.insert(c) {
            log::warn!("line {line}: duplicate ({sid}, {prov}), keeping the last");
            report.duplicates += 1;
        }
    }
    Ok((set, report))
}
