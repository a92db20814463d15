use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{
    byte_to_char, char_to_byte, pronoun_gender, DataError, GapSample, Gender, Result,
    SyntheticCorpus,
};
use crate::tensor::rng::{self, Stream};

/// A document with provider cluster predictions. Spans are (char offset,
/// char length) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub clusters: Vec<Vec<(usize, usize)>>,
}

impl Document {
    /// Documents carrying the gold clusters of a synthetic corpus.
    pub fn from_synthetic(corpus: &SyntheticCorpus) -> Vec<Document> {
        corpus
            .samples
            .iter()
            .map(|s| Document {
                doc_id: s.sample.id.clone(),
                text: s.sample.text.clone(),
                clusters: std::iter::once(s.gold_cluster.clone())
                    .chain(s.other_clusters.iter().cloned())
                    .collect(),
            })
            .collect()
    }

    fn surface(&self, (off, len): (usize, usize)) -> Option<&str> {
        let lo = char_to_byte(&self.text, off)?;
        let hi = char_to_byte(&self.text, off + len)?;
        Some(&self.text[lo..hi])
    }
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let raw = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DataError::Json { line: i + 1, source: e }))
        .collect()
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).map_err(|e| DataError::Json { line: 0, source: e })?);
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| DataError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeitherConfig {
    pub quota_m: usize,
    pub quota_f: usize,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for NeitherConfig {
    fn default() -> Self {
        Self {
            quota_m: 129,
            quota_f: 124,
            seed: 42,
            id_prefix: "neither".into(),
        }
    }
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.0 + b.1 && b.0 < a.0 + a.1
}

fn disjoint(x: &[(usize, usize)], y: &[(usize, usize)]) -> bool {
    x.iter().all(|&a| y.iter().all(|&b| !overlaps(a, b)))
}

/// Byte ranges of sentences: a sentence ends after `.`, `!` or `?` followed
/// by whitespace or the end of the text.
fn sentences(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            match chars.peek() {
                Some(&(_, n)) if n.is_whitespace() => {
                    out.push((start, i + 1));
                    start = i + 1;
                }
                None => {}
                _ => {}
            }
        }
    }
    if start < text.len() {
        out.push((start, text.len()));
    }
    out
}

/// Build NEITHER rows by picking a pronoun and two candidates from three
/// pairwise-disjoint clusters, at most one row per document, until the
/// per-gender quotas are met or documents run out.
pub fn generate_neither(docs: &[Document], cfg: &NeitherConfig) -> Vec<GapSample> {
    let mut rng = rng::stream(cfg.seed, Stream::Neither);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng);
    let mut out = Vec::new();
    let (mut m, mut f) = (0, 0);
    for di in order {
        if m >= cfg.quota_m && f >= cfg.quota_f {
            break;
        }
        let doc = &docs[di];
        let mut pronouns: Vec<(usize, (usize, usize), Gender)> = Vec::new();
        for (ci, c) in doc.clusters.iter().enumerate() {
            for &span in c {
                if let Some(g) = doc.surface(span).and_then(pronoun_gender) {
                    pronouns.push((ci, span, g));
                }
            }
        }
        pronouns.retain(|&(_, _, g)| match g {
            Gender::M => m < cfg.quota_m,
            Gender::F => f < cfg.quota_f,
        });
        pronouns.shuffle(&mut rng);
        for (ci, pspan, gender) in pronouns {
            let person_like = |span: (usize, usize)| {
                doc.surface(span).is_some_and(|s| {
                    s.chars().next().is_some_and(char::is_uppercase) && pronoun_gender(s).is_none()
                })
            };
            let eligible: Vec<usize> = (0..doc.clusters.len())
                .filter(|&j| j != ci && disjoint(&doc.clusters[j], &doc.clusters[ci]))
                .filter(|&j| doc.clusters[j].iter().any(|&s| person_like(s)))
                .collect();
            let mut pair = None;
            'search: for (x, &cx) in eligible.iter().enumerate() {
                for &cy in &eligible[x + 1..] {
                    if disjoint(&doc.clusters[cx], &doc.clusters[cy]) {
                        pair = Some((cx, cy));
                        break 'search;
                    }
                }
            }
            let Some((cx, cy)) = pair else {
                continue;
            };
            let pick = |c: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                let persons: Vec<(usize, usize)> =
                    doc.clusters[c].iter().copied().filter(|&s| person_like(s)).collect();
                *persons.choose(rng).expect("eligible cluster has a person mention")
            };
            let (x, y) = (pick(cx, &mut rng), pick(cy, &mut rng));
            let (a, b) = if x.0 <= y.0 { (x, y) } else { (y, x) };
            if let Some(sample) = window_sample(doc, &format!("{}-{}", cfg.id_prefix, out.len() + 1), pspan, a, b) {
                match gender {
                    Gender::M => m += 1,
                    Gender::F => f += 1,
                }
                out.push(sample);
                break;
            }
        }
    }
    out
}

/// Trim to the sentences covering all three spans plus one sentence of
/// padding on each side, re-offsetting the mentions.
fn window_sample(
    doc: &Document,
    id: &str,
    p: (usize, usize),
    a: (usize, usize),
    b: (usize, usize),
) -> Option<GapSample> {
    let to_b = |c: usize| char_to_byte(&doc.text, c);
    let lo = to_b(p.0.min(a.0).min(b.0))?;
    let hi = to_b((p.0 + p.1).max(a.0 + a.1).max(b.0 + b.1))?;
    let sents = sentences(&doc.text);
    let first = sents.iter().position(|s| s.1 > lo)?;
    let last = sents.iter().rposition(|s| s.0 < hi)?;
    let (first, last) = (first.saturating_sub(1), (last + 1).min(sents.len() - 1));
    let start = sents[first].0;
    let end = sents[last].1;
    let raw = &doc.text[start..end];
    let trimmed = raw.trim_start();
    let start = start + (raw.len() - trimmed.len());
    let text = doc.text[start..end].trim_end();
    let base = byte_to_char(&doc.text, start);
    let mention = |s: (usize, usize)| (doc.surface(s).expect("validated"), s.0 - base);
    GapSample::new(id, text, mention(p), mention(a), mention(b), false, false, "").ok()
}
