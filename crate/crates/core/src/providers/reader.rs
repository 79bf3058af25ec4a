use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EntityMention, ProviderError, Reader};
use crate::corpus::Document;
use crate::text::{self, Span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderAnswer {
    pub text: String,
    pub span: Span,
    pub score: f64,
}

/// Token-overlap reader: picks the mention whose sentence covers the largest
/// fraction of the question's content words.
#[derive(Debug, Clone)]
pub struct LexicalReader {
    stopwords: BTreeSet<String>,
    threshold: f64,
}

impl Default for LexicalReader {
    fn default() -> Self {
        LexicalReader::new(shipped_stopwords(), 0.2)
    }
}

pub(crate) fn shipped_stopwords() -> BTreeSet<String> {
    include_str!("../../data/stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

impl LexicalReader {
    pub fn new(stopwords: BTreeSet<String>, threshold: f64) -> Self {
        LexicalReader { stopwords, threshold }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    fn content_tokens(&self, s: &str) -> BTreeSet<String> {
        text::tokenize(s).into_iter().filter(|t| !self.stopwords.contains(t)).collect()
    }

    pub fn read(&self, question: &str, doc: &Document, mentions: &[EntityMention]) -> Option<ReaderAnswer> {
        let q_tokens = self.content_tokens(question);
        if q_tokens.is_empty() {
            return None;
        }
        let q_padded = format!(" {} ", text::tokenize(question).join(" "));
        let mut best: Option<ReaderAnswer> = None;
        for m in mentions {
            let surface = text::tokenize(&m.surface).join(" ");
            if surface.is_empty() || q_padded.contains(&format!(" {surface} ")) {
                continue;
            }
            let Some(sent) = doc.sentence_of(m.span) else {
                continue;
            };
            let sentence = text::slice(&doc.text, doc.sentences[sent]).unwrap_or_default();
            let s_tokens = self.content_tokens(sentence);
            let overlap = q_tokens.intersection(&s_tokens).count();
            let score = overlap as f64 / q_tokens.len() as f64;
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(ReaderAnswer { text: m.surface.clone(), span: m.span, score });
            }
        }
        best.filter(|b| b.score >= self.threshold && b.score > 0.0)
    }
}

impl Reader for LexicalReader {
    fn answer(
        &self,
        question: &str,
        doc: &Document,
        mentions: &[EntityMention],
    ) -> Result<Option<ReaderAnswer>, ProviderError> {
        Ok(self.read(question, doc, mentions))
    }
}
