use std::collections::BTreeSet;

use regex::Regex;

use super::{EntityMention, EntityRecognizer, MentionSource, ProviderError};
use crate::corpus::{Corpus, Document};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GazetteerEntry {
    pub surface: String,
    pub label: String,
    pub source: MentionSource,
}

#[derive(Debug, Clone)]
pub struct PatternRule {
    pub regex: Regex,
    pub label: String,
}

impl PatternRule {
    pub fn new(pattern: &str, label: &str) -> Result<Self, regex::Error> {
        Ok(PatternRule { regex: Regex::new(pattern)?, label: label.to_string() })
    }
}

/// Dictionary plus regex recognizer.
#[derive(Debug, Clone, Default)]
pub struct GazetteerRecognizer {
    entries: Vec<GazetteerEntry>,
    matchers: Vec<Regex>,
    patterns: Vec<PatternRule>,
}

impl GazetteerRecognizer {
    pub fn new(entries: Vec<GazetteerEntry>, patterns: Vec<PatternRule>) -> Self {
        let mut out = GazetteerRecognizer { entries: Vec::new(), matchers: Vec::new(), patterns };
        for e in entries {
            out.push_entry(e);
        }
        out
    }

    /// The gazetteer and date patterns shipped in `data/`.
    pub fn shipped() -> Self {
        let entries = parse_tsv(include_str!("../../data/gazetteer.tsv"))
            .map(|(surface, label)| GazetteerEntry { surface, label, source: MentionSource::Gazetteer })
            .collect();
        let patterns = parse_tsv(include_str!("../../data/patterns.tsv"))
            .map(|(label, re)| PatternRule::new(&re, &label).expect("shipped pattern compiles"))
            .collect();
        Self::new(entries, patterns)
    }

    /// Adds every entity hint found in the corpus as a gazetteer entry.
    pub fn with_corpus_hints(mut self, corpus: &Corpus) -> Self {
        for doc in &corpus.documents {
            for hint in &doc.entity_hints {
                self.push_entry(GazetteerEntry {
                    surface: hint.surface.clone(),
                    label: hint.label.clone(),
                    source: MentionSource::GoldHint,
                });
            }
        }
        self
    }

    fn push_entry(&mut self, entry: GazetteerEntry) {
        if entry.surface.trim().is_empty() {
            return;
        }
        let folded = entry.surface.to_lowercase();
        if self.entries.iter().any(|e| e.surface.to_lowercase() == folded) {
            return;
        }
        let re = Regex::new(&format!("(?i){}", regex::escape(&entry.surface))).expect("escaped literal");
        self.matchers.push(re);
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }
}

impl EntityRecognizer for GazetteerRecognizer {
    fn identify(&self, doc: &Document) -> Result<Vec<EntityMention>, ProviderError> {
        Ok(identify_with(&doc.text, &self.entries, &self.matchers, &self.patterns))
    }
}

pub(crate) fn parse_tsv(raw: &str) -> impl Iterator<Item = (String, String)> + '_ {
    raw.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).filter_map(|l| {
        let (a, b) = l.split_once('\t')?;
        Some((a.trim().to_string(), b.trim().to_string()))
    })
}

/// Finds gazetteer and pattern mentions in the document text.
///
/// Gazetteer hits are case-insensitive and must sit on token boundaries.
/// Overlaps are resolved leftmost-longest: candidates are scanned by start
/// offset, the longest candidate at each start wins and anything overlapping
/// an accepted mention is dropped. Equal candidates prefer the gazetteer, then
/// earlier entries.
pub fn identify_entities(
    doc: &Document,
    gazetteer: &[(String, String)],
    patterns: &[PatternRule],
) -> Vec<EntityMention> {
    let rec = GazetteerRecognizer::new(
        gazetteer
            .iter()
            .map(|(s, l)| GazetteerEntry { surface: s.clone(), label: l.clone(), source: MentionSource::Gazetteer })
            .collect(),
        patterns.to_vec(),
    );
    identify_with(&doc.text, &rec.entries, &rec.matchers, &rec.patterns)
}

struct Candidate {
    byte_start: usize,
    byte_end: usize,
    label: String,
    source: MentionSource,
    priority: usize,
}

fn on_token_boundary(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}

fn identify_with(
    text: &str,
    entries: &[GazetteerEntry],
    matchers: &[Regex],
    patterns: &[PatternRule],
) -> Vec<EntityMention> {
    let mut candidates = Vec::new();
    for (i, (entry, re)) in entries.iter().zip(matchers).enumerate() {
        for m in re.find_iter(text) {
            if on_token_boundary(text, m.start(), m.end()) {
                candidates.push(Candidate {
                    byte_start: m.start(),
                    byte_end: m.end(),
                    label: entry.label.clone(),
                    source: entry.source,
                    priority: i,
                });
            }
        }
    }
    for (i, rule) in patterns.iter().enumerate() {
        for m in rule.regex.find_iter(text) {
            if m.start() < m.end() {
                candidates.push(Candidate {
                    byte_start: m.start(),
                    byte_end: m.end(),
                    label: rule.label.clone(),
                    source: MentionSource::Pattern,
                    priority: entries.len() + i,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.byte_start.cmp(&b.byte_start).then(b.byte_end.cmp(&a.byte_end)).then(a.priority.cmp(&b.priority))
    });

    let mut out = Vec::new();
    let mut taken: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut last_end = 0;
    for c in candidates {
        if c.byte_start < last_end || taken.contains(&(c.byte_start, c.byte_end)) {
            continue;
        }
        taken.insert((c.byte_start, c.byte_end));
        last_end = c.byte_end;
        out.push(EntityMention {
            surface: text[c.byte_start..c.byte_end].to_string(),
            span: text::byte_range_to_span(text, c.byte_start, c.byte_end),
            label: c.label,
            source: c.source,
        });
    }
    out
}

#[cfg(test)]
/// Non-overlapping and sorted by start.
pub(crate) fn well_formed(mentions: &[EntityMention]) -> bool {
    mentions.windows(2).all(|w| w[0].span.end <= w[1].span.start)
}
