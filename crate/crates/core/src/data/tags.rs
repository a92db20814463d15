use std::ops::Range;

use super::{DataError, GapSample, Result};

pub const TAG_P: &str = "<P>";
pub const TAG_A: &str = "<A>";
pub const TAG_B: &str = "<B>";

const TAGS: [&str; 3] = [TAG_P, TAG_A, TAG_B];
const NAMES: [&str; 3] = ["pronoun", "A", "B"];

#[derive(Debug, Clone, PartialEq, Eq)]
struct Insertion {
    /// Byte position in the original text.
    at: usize,
    text: &'static str,
}

/// Sample text with `<X> span <X>` markers around the pronoun and both
/// candidates. All ranges are byte ranges into `text`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedText {
    pub text: String,
    /// Tagged-text ranges of the P, A, B surfaces (tags excluded).
    pub mentions: [Range<usize>; 3],
    insertions: Vec<Insertion>,
}

/// Wrap the three labeled spans in their tags. Closing tags at a position
/// precede opening tags there, so adjacent spans come out as
/// `<A> x <A><B> y <B>`.
pub fn insert_mention_tags(sample: &GapSample) -> Result<TaggedText> {
    let spans = sample.mentions().map(|m| m.bytes());
    for i in 0..3 {
        for j in i + 1..3 {
            if spans[i].start < spans[j].end && spans[j].start < spans[i].end {
                return Err(DataError::Overlap {
                    id: sample.id.clone(),
                    first: NAMES[i],
                    second: NAMES[j],
                });
            }
        }
    }
    // (position, 0 = close / 1 = open, mention index)
    let mut events: Vec<(usize, u8, usize)> = Vec::with_capacity(6);
    for (k, s) in spans.iter().enumerate() {
        events.push((s.start, 1, k));
        events.push((s.end, 0, k));
    }
    events.sort_unstable();

    let mut insertions = Vec::with_capacity(6);
    let mut text = String::with_capacity(sample.text.len() + 24);
    let mut mentions = [0..0, 0..0, 0..0];
    let mut cursor = 0;
    for (at, kind, k) in events {
        text.push_str(&sample.text[cursor..at]);
        cursor = at;
        let ins: &'static str = match (kind, k) {
            (1, 0) => "<P> ",
            (1, 1) => "<A> ",
            (1, _) => "<B> ",
            (_, 0) => " <P>",
            (_, 1) => " <A>",
            (_, _) => " <B>",
        };
        if kind == 1 {
            text.push_str(ins);
            mentions[k].start = text.len();
        } else {
            mentions[k].end = text.len();
            text.push_str(ins);
        }
        insertions.push(Insertion { at, text: ins });
    }
    text.push_str(&sample.text[cursor..]);
    Ok(TaggedText {
        text,
        mentions,
        insertions,
    })
}

impl TaggedText {
    /// Tagged position of an original offset that starts a span.
    pub fn map_start(&self, orig: usize) -> usize {
        orig + self
            .insertions
            .iter()
            .filter(|i| i.at <= orig)
            .map(|i| i.text.len())
            .sum::<usize>()
    }

    /// Tagged position of an original exclusive span end.
    pub fn map_end(&self, orig: usize) -> usize {
        orig + self
            .insertions
            .iter()
            .filter(|i| i.at < orig)
            .map(|i| i.text.len())
            .sum::<usize>()
    }

    pub fn map_range(&self, orig: Range<usize>) -> Range<usize> {
        self.map_start(orig.start)..self.map_end(orig.end)
    }

    /// Original offset of a tagged position lying outside the inserted tags.
    pub fn unmap(&self, tagged: usize) -> Option<usize> {
        let mut shift = 0;
        for ins in &self.insertions {
            let lo = ins.at + shift;
            let hi = lo + ins.text.len();
            if tagged < lo {
                break;
            }
            if tagged < hi && tagged > lo {
                return None;
            }
            if tagged >= hi {
                shift += ins.text.len();
            } else {
                break;
            }
        }
        Some(tagged - shift)
    }

    /// Remove every inserted tag, recovering the original text.
    pub fn strip(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut shift = 0;
        let mut cursor = 0;
        for ins in &self.insertions {
            let lo = ins.at + shift;
            out.push_str(&self.text[cursor..lo]);
            cursor = lo + ins.text.len();
            shift += ins.text.len();
        }
        out.push_str(&self.text[cursor..]);
        out
    }

    pub fn tag_of(k: usize) -> &'static str {
        TAGS[k]
    }
}
