//! Documents, gold slot fills and the two on-disk record shapes they load from.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::text::{self, Span};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
}

/// A gold answer as it appears in the record: literal text or a character range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Text(String),
    Range(Span),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldFill {
    pub slot: String,
    pub answers: Vec<Answer>,
}

/// Entity annotation carried by a record. Offsets are optional; the surface
/// and label alone are enough to seed the gazetteer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityHint {
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub sentences: Vec<Span>,
    pub gold_fills: Vec<GoldFill>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entity_hints: Vec<EntityHint>,
}

impl Document {
    /// Builds a document, segmenting its text and validating the gold fills.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold_fills: Vec<GoldFill>,
        entity_hints: Vec<EntityHint>,
    ) -> Result<Self, String> {
        let id = id.into();
        let text = text.into();
        if id.is_empty() {
            return Err("document id must be non-empty".into());
        }
        let len = text::char_len(&text);
        for fill in &gold_fills {
            if fill.slot.is_empty() {
                return Err(format!("document {id}: gold fill with empty slot"));
            }
            if fill.answers.is_empty() {
                return Err(format!("document {id}: slot {} has no answers", fill.slot));
            }
            for answer in &fill.answers {
                if let Answer::Range(span) = answer {
                    if span.start > span.end || span.end > len {
                        return Err(format!(
                            "document {id}: answer range [{}, {}) outside text of length {len}",
                            span.start, span.end
                        ));
                    }
                }
            }
        }
        for hint in &entity_hints {
            if hint.surface.is_empty() || hint.label.is_empty() {
                return Err(format!("document {id}: entity hint needs surface and label"));
            }
        }
        let sentences = segment(&text);
        Ok(Document { id, text, sentences, gold_fills, entity_hints })
    }

    /// Gold answers for `slot`, with ranges resolved to their text.
    pub fn gold_answers(&self, slot: &str) -> Vec<String> {
        self.gold_fills
            .iter()
            .filter(|f| f.slot == slot)
            .flat_map(|f| f.answers.iter())
            .filter_map(|a| match a {
                Answer::Text(s) => Some(s.clone()),
                Answer::Range(span) => text::slice(&self.text, *span).map(str::to_string),
            })
            .collect()
    }

    pub fn has_slot(&self, slot: &str) -> bool {
        self.gold_fills.iter().any(|f| f.slot == slot)
    }

    /// Index of the sentence containing `span`, if any.
    pub fn sentence_of(&self, span: Span) -> Option<usize> {
        self.sentences.iter().position(|s| s.contains(&span))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub slot_inventory: BTreeSet<String>,
}

impl Corpus {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for doc in &documents {
            if !seen.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        let slot_inventory = documents.iter().flat_map(|d| d.gold_fills.iter().map(|f| f.slot.clone())).collect();
        Ok(Corpus { documents, slot_inventory })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Keeps only gold fills whose slot is in `slots`; used to evaluate a
    /// chosen subset of a larger clause inventory.
    pub fn restrict_slots(&self, slots: &BTreeSet<String>) -> Corpus {
        let documents = self
            .documents
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.gold_fills.retain(|f| slots.contains(&f.slot));
                d
            })
            .collect();
        Corpus::from_documents(documents).expect("ids already unique")
    }

    /// Serializes to the corpus jsonl record shape.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            let record = CorpusRecord {
                id: doc.id.clone(),
                text: doc.text.clone(),
                gold: doc.gold_fills.clone(),
                entities: doc.entity_hints.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Triples,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "triples" => Ok(CorpusFormat::Triples),
            other => Err(format!("unknown corpus format {other:?} (expected jsonl or triples)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorpusRecord {
    id: String,
    text: String,
    #[serde(default)]
    gold: Vec<GoldFill>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    entities: Vec<EntityHint>,
}

/// One biomedical-style relation instance with the text it was found in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleConversion {
    pub corpus: Corpus,
    /// Records skipped because subject or object was not found in the text.
    pub skipped: usize,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    parse_corpus(&raw, format)
}

pub fn parse_corpus(raw: &str, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    match format {
        CorpusFormat::Jsonl => {
            let mut documents = Vec::new();
            for (line, record) in jsonl_records::<CorpusRecord>(raw) {
                let record = record?;
                let doc = Document::new(record.id, record.text, record.gold, record.entities)
                    .map_err(|message| CorpusError::Format { line, message })?;
                documents.push(doc);
            }
            Corpus::from_documents(documents)
        }
        CorpusFormat::Triples => {
            let mut records = Vec::new();
            for (_, record) in jsonl_records::<TripleRecord>(raw) {
                records.push(record?);
            }
            let converted = convert_triples(&records);
            if converted.skipped > 0 {
                warn!(skipped = converted.skipped, "triples without a matching span were skipped");
            }
            Ok(converted.corpus)
        }
    }
}

fn jsonl_records<T: for<'de> Deserialize<'de>>(
    raw: &str,
) -> impl Iterator<Item = (usize, Result<T, CorpusError>)> + '_ {
    raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| {
        let line = i + 1;
        let parsed = serde_json::from_str::<T>(l).map_err(|e| CorpusError::Format { line, message: e.to_string() });
        (line, parsed)
    })
}

/// Case-insensitive search returning the matched slice of `haystack`.
fn find_ci<'a>(haystack: &'a str, needle: &str) -> Option<&'a str> {
    if needle.is_empty() {
        return None;
    }
    let pattern = format!("(?i){}", regex::escape(needle));
    let re = regex::Regex::new(&pattern).ok()?;
    re.find(haystack).map(|m| m.as_str())
}

/// Groups triples by their text: one document per distinct text, one gold
/// fill per relation, the subject kept as an entity hint.
pub fn convert_triples(records: &[TripleRecord]) -> TripleConversion {
    let mut order: Vec<&str> = Vec::new();
    let mut fills: BTreeMap<&str, Vec<GoldFill>> = BTreeMap::new();
    let mut hints: BTreeMap<&str, Vec<EntityHint>> = BTreeMap::new();
    let mut skipped = 0;

    for rec in records {
        let subject = find_ci(&rec.text, &rec.subject);
        let object = find_ci(&rec.text, &rec.object);
        let (Some(subject), Some(object)) = (subject, object) else {
            skipped += 1;
            continue;
        };
        if rec.relation.is_empty() {
            skipped += 1;
            continue;
        }
        let key = rec.text.as_str();
        if !fills.contains_key(key) {
            order.push(key);
        }
        let doc_fills = fills.entry(key).or_default();
        let answer = Answer::Text(object.to_string());
        match doc_fills.iter_mut().find(|f| f.slot == rec.relation) {
            Some(f) if !f.answers.contains(&answer) => f.answers.push(answer),
            Some(_) => {}
            None => doc_fills.push(GoldFill { slot: rec.relation.clone(), answers: vec![answer] }),
        }
        let doc_hints = hints.entry(key).or_default();
        if !doc_hints.iter().any(|h| h.surface == subject) {
            doc_hints.push(EntityHint {
                surface: subject.to_string(),
                start: None,
                end: None,
                label: "ENTITY".to_string(),
            });
        }
    }

    let documents = order
        .iter()
        .enumerate()
        .map(|(i, text)| {
            Document::new(
                format!("t{}", i + 1),
                *text,
                fills.remove(text).unwrap_or_default(),
                hints.remove(text).unwrap_or_default(),
            )
            .expect("converted triples are valid documents")
        })
        .collect();
    TripleConversion { corpus: Corpus::from_documents(documents).expect("generated ids are unique"), skipped }
}

static ABBREVIATIONS: LazyLock<BTreeSet<String>> = LazyLock::new(|| {
    include_str!("../data/abbreviations.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
});

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// Splits text into sentence ranges on `.`, `?` or `!` followed by whitespace
/// or end of text. A period ending a listed abbreviation does not split.
/// Ranges are trimmed of surrounding whitespace.
pub fn segment(text: &str) -> Vec<Span> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_terminator(chars[i]) {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < chars.len() && (is_terminator(chars[end]) || is_closer(chars[end])) {
            end += 1;
        }
        let at_boundary = end == chars.len() || chars[end].is_whitespace();
        if at_boundary && !(chars[i] == '.' && ends_with_abbreviation(&chars[start..i + 1])) {
            push_trimmed(&chars, start, end, &mut out);
            start = end;
        }
        i = end;
    }
    push_trimmed(&chars, start, chars.len(), &mut out);
    out
}

fn ends_with_abbreviation(chars: &[char]) -> bool {
    let token_start = chars.iter().rposition(|c| c.is_whitespace()).map_or(0, |p| p + 1);
    let token: String = chars[token_start..].iter().collect::<String>().to_lowercase();
    let token = token.trim_start_matches(['(', '"', '\'']);
    ABBREVIATIONS.contains(token)
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<Span>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        out.push(Span::new(start, end));
    }
}
