use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::pre_split;
use super::{DataError, Result};

pub const ID_PAD: u32 = 0;
pub const ID_P: u32 = 1;
pub const ID_A: u32 = 2;
pub const ID_B: u32 = 3;
/// Ids `BYTE_BASE..BYTE_BASE + 256` stand for raw bytes.
pub const BYTE_BASE: u32 = 4;
pub const NUM_RESERVED: usize = 4 + 256;

const MAX_PIECE_CHARS: usize = 16;

/// Subword vocabulary. Word-initial pieces are stored bare, continuation
/// pieces carry a `##` prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_len: usize,
}

impl From<Vec<String>> for Vocab {
    fn from(pieces: Vec<String>) -> Self {
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), (i + NUM_RESERVED) as u32))
            .collect();
        let max_piece_len = pieces
            .iter()
            .map(|p| p.trim_start_matches("##").len())
            .max()
            .unwrap_or(0);
        Self {
            pieces,
            index,
            max_piece_len,
        }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.pieces
    }
}

impl Vocab {
    /// Frequency-driven vocabulary of `size` ids in total (reserved ids
    /// included). Every character seen in the corpus gets a piece when room
    /// allows; the remaining budget goes to the substrings with the most
    /// frequency-weighted characters, ties broken lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, size: usize) -> Result<Self> {
        if size < NUM_RESERVED {
            return Err(DataError::Vocab(format!(
                "size {size} is below the {NUM_RESERVED} reserved ids"
            )));
        }
        let mut words: HashMap<&str, u64> = HashMap::new();
        for text in texts {
            for (_, core, is_tag) in pre_split(text) {
                if !is_tag {
                    *words.entry(&text[core]).or_default() += 1;
                }
            }
        }
        if words.is_empty() {
            return Err(DataError::Vocab("empty corpus".into()));
        }

        let mut singles: HashMap<String, u64> = HashMap::new();
        let mut multi: HashMap<String, u64> = HashMap::new();
        for (&w, &f) in &words {
            let bounds: Vec<usize> = w
                .char_indices()
                .map(|(i, _)| i)
                .chain(std::iter::once(w.len()))
                .collect();
            let n = bounds.len() - 1;
            for i in 0..n {
                for j in i + 1..=n.min(i + MAX_PIECE_CHARS) {
                    let sub = &w[bounds[i]..bounds[j]];
                    let piece = if i == 0 {
                        sub.to_string()
                    } else {
                        format!("##{sub}")
                    };
                    let target = if j - i == 1 { &mut singles } else { &mut multi };
                    *target.entry(piece).or_default() += f * (j - i) as u64;
                }
            }
        }
        let ranked = |m: HashMap<String, u64>| {
            let mut v: Vec<(String, u64)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v.into_iter().map(|(p, _)| p)
        };
        let budget = size - NUM_RESERVED;
        let pieces: Vec<String> = ranked(singles).chain(ranked(multi)).take(budget).collect();
        Ok(Self::from(pieces))
    }

    pub fn len(&self) -> usize {
        NUM_RESERVED + self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn max_piece_len(&self) -> usize {
        self.max_piece_len
    }

    /// Display form of an id.
    pub fn token_str(&self, id: u32) -> String {
        match id {
            ID_PAD => "<pad>".into(),
            ID_P => "<P>".into(),
            ID_A => "<A>".into(),
            ID_B => "<B>".into(),
            i if (i as usize) < NUM_RESERVED => format!("<0x{:02X}>", i - BYTE_BASE),
            i => self
                .pieces
                .get(i as usize - NUM_RESERVED)
                .cloned()
                .unwrap_or_else(|| format!("<unk:{i}>")),
        }
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_word_corpus() {
        let v = Vocab::build(["aaa"], 300).unwrap();
        assert!(v.get("aaa").is_some());
        assert!(v.get("a").is_some());
        assert!(v.get("##a").is_some());
    }

    #[test]
    fn rebuild_is_deterministic() {
        let texts = ["the cat sat on the mat", "<A> Ann <A> met her"];
        let a = Vocab::build(texts, 320).unwrap();
        let b = Vocab::build(texts, 320).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.token_str(ID_P), "<P>");
        assert_eq!(a.token_str(BYTE_BASE + 0x41), "<0x41>");
        assert!(a.get("<A>").is_none());
    }

    #[test]
    fn errors() {
        assert!(matches!(Vocab::build(["x"], 100), Err(DataError::Vocab(_))));
        assert!(matches!(Vocab::build(["  "], 400), Err(DataError::Vocab(_))));
    }

    #[test]
    fn serializes_as_piece_list() {
        let v = Vocab::build(["hello world"], 280).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert!(v.len() <= 280);
    }
}
