//! GAP-format corpora: parsing, mention tags, tokenization, label
//! corrections and synthetic data generation.

mod corrections;
mod gap;
mod neither;
mod synth;
mod tags;
mod tokenize;
mod vocab;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corrections::{
    append_correction, apply_corrections, load_corrections, revert_corrections, CorrectionRecord,
    DeltaReport,
};
pub use gap::{parse_tsv, parse_tsv_str, write_tsv, GAP_HEADER};
pub use neither::{generate_neither, load_documents, write_documents, Document, NeitherConfig};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus, SyntheticSample};
pub use tags::{insert_mention_tags, TaggedText, TAG_A, TAG_B, TAG_P};
pub use tokenize::{tokenize, tokenize_text, Token, TokenizedExample};
pub use vocab::{Vocab, BYTE_BASE, ID_A, ID_B, ID_P, ID_PAD, NUM_RESERVED};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("row {row}: {msg}")]
    Malformed { row: usize, msg: String },
    #[error("sample {id}: {mention} surface {surface:?} does not match text at offset {offset}")]
    Integrity {
        id: String,
        mention: &'static str,
        surface: String,
        offset: usize,
    },
    #[error("sample {id}: pronoun {pronoun:?} is not in the gender lexicon")]
    Gender { id: String, pronoun: String },
    #[error("sample {0}: both candidates marked coreferent")]
    ContradictoryGold(String),
    #[error("sample {id}: mention spans overlap ({first} and {second})")]
    Overlap {
        id: String,
        first: &'static str,
        second: &'static str,
    },
    #[error("sample {id}: labeled mentions span {needed} tokens, more than the limit of {max_len}")]
    Truncation {
        id: String,
        needed: usize,
        max_len: usize,
    },
    #[error("unknown sample id {0}")]
    UnknownId(String),
    #[error("stale correction for {id}: expected current label {expected}, found {found}")]
    StaleCorrection {
        id: String,
        expected: Label,
        found: Label,
    },
    #[error("correction for {0} does not change its label")]
    NoOpCorrection(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("synthetic corpus: {0}")]
    Synthetic(String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    #[serde(rename = "NEITHER")]
    Neither,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::A, Label::B, Label::Neither];

    pub fn index(self) -> usize {
        match self {
            Label::A => 0,
            Label::B => 1,
            Label::Neither => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    /// The coreference flags (a_coref, b_coref) this label stands for.
    pub fn flags(self) -> (bool, bool) {
        match self {
            Label::A => (true, false),
            Label::B => (false, true),
            Label::Neither => (false, false),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
            Label::Neither => "NEITHER",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Label::A),
            "B" => Ok(Label::B),
            "NEITHER" | "N" => Ok(Label::Neither),
            _ => Err(format!("unknown label {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

pub fn derive_label(a_coref: bool, b_coref: bool) -> Option<Label> {
    match (a_coref, b_coref) {
        (true, false) => Some(Label::A),
        (false, true) => Some(Label::B),
        (false, false) => Some(Label::Neither),
        (true, true) => None,
    }
}

/// Gender of a pronoun surface form, case-insensitive.
pub fn pronoun_gender(pronoun: &str) -> Option<Gender> {
    match pronoun.to_lowercase().as_str() {
        "he" | "him" | "his" => Some(Gender::M),
        "she" | "her" | "hers" => Some(Gender::F),
        _ => None,
    }
}

/// A labeled span. `offset` counts characters, as GAP files do; `start` is
/// the equivalent byte offset into the sample text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub offset: usize,
    #[serde(skip)]
    pub start: usize,
}

impl Mention {
    /// Build from a character offset, validating the surface against `text`.
    pub fn at_char(text: &str, surface: &str, offset: usize) -> Option<Self> {
        let start = char_to_byte(text, offset)?;
        if text[start..].starts_with(surface) && !surface.is_empty() {
            Some(Self {
                surface: surface.to_string(),
                offset,
                start,
            })
        } else {
            None
        }
    }

    pub fn bytes(&self) -> Range<usize> {
        self.start..self.start + self.surface.len()
    }

    pub fn char_len(&self) -> usize {
        self.surface.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSample {
    pub id: String,
    pub text: String,
    pub pronoun: Mention,
    pub a: Mention,
    pub b: Mention,
    pub a_coref: bool,
    pub b_coref: bool,
    pub url: String,
    pub gender: Gender,
}

impl GapSample {
    /// Validate spans, flags and the pronoun, filling in byte offsets.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: &str,
        text: &str,
        pronoun: (&str, usize),
        a: (&str, usize),
        b: (&str, usize),
        a_coref: bool,
        b_coref: bool,
        url: &str,
    ) -> Result<Self> {
        let mention = |name: &'static str, (surface, offset): (&str, usize)| {
            Mention::at_char(text, surface, offset).ok_or_else(|| DataError::Integrity {
                id: id.to_string(),
                mention: name,
                surface: surface.to_string(),
                offset,
            })
        };
        let p = mention("pronoun", pronoun)?;
        let gender = pronoun_gender(&p.surface).ok_or_else(|| DataError::Gender {
            id: id.to_string(),
            pronoun: p.surface.clone(),
        })?;
        if a_coref && b_coref {
            return Err(DataError::ContradictoryGold(id.to_string()));
        }
        Ok(Self {
            id: id.to_string(),
            text: text.to_string(),
            pronoun: p,
            a: mention("A", a)?,
            b: mention("B", b)?,
            a_coref,
            b_coref,
            url: url.to_string(),
            gender,
        })
    }

    pub fn label(&self) -> Label {
        derive_label(self.a_coref, self.b_coref).expect("validated at construction")
    }

    pub fn set_label(&mut self, label: Label) {
        (self.a_coref, self.b_coref) = label.flags();
    }

    /// Mentions in P, A, B order.
    pub fn mentions(&self) -> [&Mention; 3] {
        [&self.pronoun, &self.a, &self.b]
    }
}

/// Byte offset of the `n`th character, or the text length when `n` equals the
/// character count.
pub fn char_to_byte(text: &str, n: usize) -> Option<usize> {
    if n == 0 {
        return Some(0);
    }
    match text.char_indices().nth(n) {
        Some((b, _)) => Some(b),
        None if text.chars().count() == n => Some(text.len()),
        None => None,
    }
}

pub fn byte_to_char(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_label_table() {
        assert_eq!(derive_label(true, false), Some(Label::A));
        assert_eq!(derive_label(false, true), Some(Label::B));
        assert_eq!(derive_label(false, false), Some(Label::Neither));
        assert_eq!(derive_label(true, true), None);
    }

    #[test]
    fn gender_lexicon_is_case_insensitive() {
        for p in ["he", "His", "HIM"] {
            assert_eq!(pronoun_gender(p), Some(Gender::M));
        }
        for p in ["she", "Her", "hers"] {
            assert_eq!(pronoun_gender(p), Some(Gender::F));
        }
        assert_eq!(pronoun_gender("they"), None);
    }

    #[test]
    fn char_offsets_map_to_bytes() {
        let t = "Zoë met him";
        assert_eq!(char_to_byte(t, 4), Some(5));
        assert_eq!(char_to_byte(t, 11), Some(t.len()));
        assert_eq!(char_to_byte(t, 12), None);
        assert_eq!(byte_to_char(t, 5), 4);
        let m = Mention::at_char(t, "him", 8).unwrap();
        assert_eq!(&t[m.bytes()], "him");
    }

    #[test]
    fn sample_rejects_bad_input() {
        let t = "Ann saw Bea and she left";
        assert!(GapSample::new("x", t, ("she", 16), ("Ann", 0), ("Bea", 8), true, false, "").is_ok());
        assert!(matches!(
            GapSample::new("x", t, ("she", 15), ("Ann", 0), ("Bea", 8), true, false, ""),
            Err(DataError::Integrity { mention: "pronoun", .. })
        ));
        assert!(matches!(
            GapSample::new("x", t, ("and", 12), ("Ann", 0), ("Bea", 8), true, false, ""),
            Err(DataError::Gender { .. })
        ));
        assert!(matches!(
            GapSample::new("x", t, ("she", 16), ("Ann", 0), ("Bea", 8), true, true, ""),
            Err(DataError::ContradictoryGold(_))
        ));
    }

    #[test]
    fn label_parses_and_round_trips() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
            assert_eq!(Label::from_index(l.index()), Some(l));
            assert_eq!(derive_label(l.flags().0, l.flags().1), Some(l));
        }
        assert_eq!(serde_json::to_string(&Label::Neither).unwrap(), "\"NEITHER\"");
    }
}
