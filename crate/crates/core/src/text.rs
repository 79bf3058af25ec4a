//! Character-offset spans and small text helpers shared by every stage.
//!
//! All public ranges in this crate count Unicode scalar values, not bytes, so
//! they can be handed to clients that index text by character.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Half-open character range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Number of characters in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Byte offset of every character boundary, including the final one.
pub fn char_boundaries(text: &str) -> Vec<usize> {
    let mut out: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    out.push(text.len());
    out
}

/// Returns the substring covered by a character span, or `None` when the span
/// falls outside the text.
pub fn slice(text: &str, span: Span) -> Option<&str> {
    let bounds = char_boundaries(text);
    if span.start > span.end || span.end >= bounds.len() {
        return None;
    }
    Some(&text[bounds[span.start]..bounds[span.end]])
}

/// Converts a byte range (on char boundaries) into a character span.
pub fn byte_range_to_span(text: &str, start: usize, end: usize) -> Span {
    let s = text[..start].chars().count();
    let e = s + text[start..end].chars().count();
    Span::new(s, e)
}

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\[mask\]|[\p{L}\p{N}]+").expect("token regex"));

pub const MASK: &str = "[MASK]";

/// Lowercased alphanumeric tokens; the mask placeholder survives as `[MASK]`.
pub fn tokenize(text: &str) -> Vec<String> {
    TOKEN_RE
        .find_iter(text)
        .map(|m| {
            let t = m.as_str();
            if t.eq_ignore_ascii_case(MASK) {
                MASK.to_string()
            } else {
                t.to_lowercase()
            }
        })
        .collect()
}

/// Lowercase, trim and collapse runs of whitespace to one space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Collapses whitespace runs without touching case.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Byte range of the first case-insensitive occurrence of `needle`.
pub fn find_ignore_case(text: &str, needle: &str) -> Option<(usize, usize)> {
    if needle.is_empty() {
        return None;
    }
    let lower = text.to_lowercase();
    let folded = needle.to_lowercase();
    // lowercasing can shift byte offsets for a few scripts; fall back to an exact search
    let start = if lower.len() == text.len() && folded.len() == needle.len() {
        lower.find(&folded)?
    } else {
        text.find(needle)?
    };
    let end = start + needle.len();
    (text.is_char_boundary(start) && text.is_char_boundary(end)).then_some((start, end))
}
