use std::ops::Range;

use super::tags::{insert_mention_tags, TaggedText, TAG_A, TAG_B, TAG_P};
use super::vocab::{Vocab, BYTE_BASE, ID_A, ID_B, ID_P};
use super::{DataError, GapSample, Gender, Label, Result};

/// One token. `span` covers the token's characters plus any whitespace
/// before it (and, for the final token, after it), so consecutive spans tile
/// the input. `core` excludes that whitespace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub span: Range<usize>,
    pub core: Range<usize>,
}

/// Split into (span, core, is_tag) words: tag markers, alphanumeric runs, and
/// single other characters.
pub(crate) fn pre_split(text: &str) -> Vec<(Range<usize>, Range<usize>, bool)> {
    let mut out: Vec<(Range<usize>, Range<usize>, bool)> = Vec::new();
    let mut ws_start = 0;
    let mut it = text.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if c.is_whitespace() {
            continue;
        }
        let rest = &text[i..];
        let (end, tag) = if [TAG_P, TAG_A, TAG_B].iter().any(|t| rest.starts_with(t)) {
            it.next();
            it.next();
            (i + 3, true)
        } else if c.is_alphanumeric() {
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = it.peek() {
                if !d.is_alphanumeric() {
                    break;
                }
                end = j + d.len_utf8();
                it.next();
            }
            (end, false)
        } else {
            (i + c.len_utf8(), false)
        };
        out.push((ws_start..end, i..end, tag));
        ws_start = end;
    }
    if let Some(last) = out.last_mut() {
        last.0.end = text.len();
    }
    out
}

/// Greedy longest-match subword segmentation with byte fallback.
/// Whitespace-only input yields no tokens.
pub fn tokenize_text(text: &str, vocab: &Vocab) -> Vec<Token> {
    let mut out = Vec::new();
    let mut key = String::new();
    for (span, core, is_tag) in pre_split(text) {
        let first_tok = out.len();
        if is_tag {
            let id = match &text[core.clone()] {
                TAG_P => ID_P,
                TAG_A => ID_A,
                _ => ID_B,
            };
            out.push(Token { id, span: core.clone(), core });
        } else {
            let word = &text[core.clone()];
            let mut pos = 0;
            while pos < word.len() {
                let mut hit = None;
                let mut end = (pos + vocab.max_piece_len()).min(word.len());
                while end > pos {
                    if word.is_char_boundary(end) {
                        key.clear();
                        if pos > 0 {
                            key.push_str("##");
                        }
                        key.push_str(&word[pos..end]);
                        if let Some(id) = vocab.get(&key) {
                            hit = Some((id, end));
                            break;
                        }
                    }
                    end -= 1;
                }
                let base = core.start;
                match hit {
                    Some((id, end)) => {
                        out.push(Token {
                            id,
                            span: base + pos..base + end,
                            core: base + pos..base + end,
                        });
                        pos = end;
                    }
                    None => {
                        let clen = word[pos..].chars().next().expect("non-empty").len_utf8();
                        for k in 0..clen {
                            let b = base + pos + k;
                            out.push(Token {
                                id: BYTE_BASE + word.as_bytes()[pos + k] as u32,
                                span: b..b + 1,
                                core: b..b + 1,
                            });
                        }
                        pos += clen;
                    }
                }
            }
        }
        out[first_tok].span.start = span.start;
        out.last_mut().expect("word produced a token").span.end = span.end;
    }
    out
}

/// A sample ready for the encoder: tagged, tokenized and windowed.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedExample {
    pub id: String,
    pub label: Label,
    pub gender: Gender,
    pub tagged: TaggedText,
    /// Tokens inside the window.
    pub tokens: Vec<Token>,
    /// Index range of the window within the full tokenization.
    pub window: Range<usize>,
    /// Token ranges (window-relative) of the P, A, B surfaces.
    pub mentions: [Range<usize>; 3],
    /// Window-relative (opening, closing) tag token positions for P, A, B.
    pub tags: [(usize, usize); 3],
}

pub fn tokenize(sample: &GapSample, vocab: &Vocab, max_len: usize) -> Result<TokenizedExample> {
    let tagged = insert_mention_tags(sample)?;
    let full = tokenize_text(&tagged.text, vocab);
    let tag_ids = [ID_P, ID_A, ID_B];
    let names = ["pronoun", "A", "B"];
    let mut mentions = [0..0, 0..0, 0..0];
    let mut tags = [(0, 0); 3];
    for k in 0..3 {
        let m = &tagged.mentions[k];
        let r = covering(&full, m.clone());
        let ok = match &r {
            Some(r) => {
                r.start > 0
                    && r.end < full.len()
                    && full[r.start - 1].id == tag_ids[k]
                    && full[r.end].id == tag_ids[k]
            }
            None => false,
        };
        if !ok {
            let mention = sample.mentions()[k];
            return Err(DataError::Integrity {
                id: sample.id.clone(),
                mention: names[k],
                surface: mention.surface.clone(),
                offset: mention.offset,
            });
        }
        let r = r.expect("checked");
        tags[k] = (r.start - 1, r.end);
        mentions[k] = r;
    }

    let n = full.len();
    let window = if n <= max_len {
        0..n
    } else {
        let lo = tags.iter().map(|t| t.0).min().expect("three tags");
        let hi = tags.iter().map(|t| t.1).max().expect("three tags") + 1;
        let need = hi - lo;
        if need > max_len {
            return Err(DataError::Truncation {
                id: sample.id.clone(),
                needed: need,
                max_len,
            });
        }
        let start = lo.saturating_sub((max_len - need) / 2).min(n - max_len);
        log::warn!(
            "sample {}: {n} tokens truncated to window {start}..{}",
            sample.id,
            start + max_len
        );
        start..start + max_len
    };
    let shift = window.start;
    Ok(TokenizedExample {
        id: sample.id.clone(),
        label: sample.label(),
        gender: sample.gender,
        tokens: full[window.clone()].to_vec(),
        window,
        mentions: mentions.map(|r| r.start - shift..r.end - shift),
        tags: tags.map(|(o, c)| (o - shift, c - shift)),
        tagged,
    })
}

/// Minimal token range whose cores intersect `bytes`.
fn covering(tokens: &[Token], bytes: Range<usize>) -> Option<Range<usize>> {
    if bytes.is_empty() {
        return None;
    }
    let first = tokens.iter().position(|t| t.core.end > bytes.start)?;
    let last = tokens.iter().rposition(|t| t.core.start < bytes.end)?;
    (first <= last).then_some(first..last + 1)
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    /// Window-relative tokens covering a tagged-text byte range, or `None`
    /// when the range is empty or not fully inside the window.
    pub fn token_range(&self, bytes: Range<usize>) -> Option<Range<usize>> {
        let (first, last) = (self.tokens.first()?, self.tokens.last()?);
        if bytes.start < first.core.start || bytes.end > last.core.end {
            return None;
        }
        covering(&self.tokens, bytes)
    }

    /// Tagged text covered by a token range (cores only at the edges).
    pub fn text_of(&self, range: Range<usize>) -> String {
        let lo = self.tokens[range.start].core.start;
        let hi = self.tokens[range.end - 1].core.end;
        String::from_utf8_lossy(&self.tagged.text.as_bytes()[lo..hi]).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        Vocab::build(["His cousin is the captain of the team", "her uncle"], 400).unwrap()
    }

    fn rebuild(text: &str, toks: &[Token]) -> Vec<u8> {
        toks.iter()
            .flat_map(|t| text.as_bytes()[t.span.clone()].to_vec())
            .collect()
    }

    #[test]
    fn pronoun_between_tags() {
        let v = vocab();
        let toks = tokenize_text("<P> His <P>", &v);
        assert_eq!(toks.len(), 3);
        assert_eq!(toks[0].id, ID_P);
        assert_eq!(toks[2].id, ID_P);
        assert_eq!(covering(&toks, 4..7), Some(1..2));
    }

    #[test]
    fn unknown_unicode_falls_back_to_bytes() {
        let v = vocab();
        let text = "his 東京 cousin";
        let toks = tokenize_text(text, &v);
        let bytes: Vec<&Token> = toks
            .iter()
            .filter(|t| t.id >= BYTE_BASE && t.id < BYTE_BASE + 256)
            .collect();
        assert_eq!(bytes.len(), "東京".len());
        assert_eq!(rebuild(text, &toks), text.as_bytes());
    }

    #[test]
    fn greedy_longest_match() {
        let v = Vocab::from(vec!["un".to_string(), "unc".into(), "##le".into(), "##l".into(), "##e".into()]);
        let toks = tokenize_text("  uncle ", &v);
        let ids: Vec<String> = toks.iter().map(|t| v.token_str(t.id)).collect();
        assert_eq!(ids, ["unc", "##le"]);
        assert_eq!(toks[0].span, 0..5);
        assert_eq!(toks[1].span, 5..8);
    }

    #[test]
    fn window_keeps_labeled_mentions() {
        let filler = "the team ".repeat(40);
        let text = format!("{filler}Ann met Bea and her uncle. {filler}");
        let off = |s: &str| text.find(s).unwrap();
        let s = GapSample::new("w", &text, ("her", off("her")), ("Ann", off("Ann")), ("Bea", off("Bea")), true, false, "")
            .unwrap();
        let v = vocab();
        let ex = tokenize(&s, &v, 32).unwrap();
        assert_eq!(ex.len(), 32);
        for k in 0..3 {
            assert_eq!(ex.text_of(ex.mentions[k].clone()), s.mentions()[k].surface);
            assert_eq!(ex.tokens[ex.tags[k].0].id, [ID_P, ID_A, ID_B][k]);
        }
        assert!(matches!(tokenize(&s, &v, 8), Err(DataError::Truncation { .. })));
    }

    proptest! {
        #[test]
        fn spans_tile_the_input(text in "[ a-zA-Z0-9,.'<>PAB東é\t]{0,60}") {
            let v = vocab();
            let toks = tokenize_text(&text, &v);
            if text.trim().is_empty() {
                prop_assert!(toks.is_empty());
                return Ok(());
            }
            prop_assert_eq!(rebuild(&text, &toks), text.as_bytes().to_vec());
            for w in toks.windows(2) {
                prop_assert_eq!(w[0].span.end, w[1].span.start);
            }
            for t in &toks {
                prop_assert!(!t.core.is_empty());
                prop_assert!(t.span.start <= t.core.start && t.core.end <= t.span.end);
            }
        }
    }
}
