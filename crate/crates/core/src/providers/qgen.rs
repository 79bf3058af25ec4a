use std::collections::BTreeMap;

use tracing::warn;

use super::ner::parse_tsv;
use super::{EntityMention, GeneratedQuestion, ProviderError, QuestionGenerator};
use crate::corpus::Document;
use crate::text::{self, Span};

/// Label-keyed wh-phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WhTemplates {
    by_label: BTreeMap<String, String>,
    fallback: String,
}

impl WhTemplates {
    /// Parses `label<TAB>phrase` lines; the label `*` sets the fallback.
    pub fn parse(raw: &str) -> Self {
        let mut by_label = BTreeMap::new();
        let mut fallback = "what".to_string();
        for (label, phrase) in parse_tsv(raw) {
            if label == "*" {
                fallback = phrase;
            } else {
                by_label.insert(label.to_uppercase(), phrase);
            }
        }
        WhTemplates { by_label, fallback }
    }

    pub fn shipped() -> Self {
        Self::parse(include_str!("../../data/wh_templates.tsv"))
    }

    pub fn phrase(&self, label: &str) -> &str {
        self.by_label.get(&label.to_uppercase()).map_or(self.fallback.as_str(), String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QgOutput {
    pub questions: Vec<GeneratedQuestion>,
    /// Mentions whose sentence could not be located.
    pub skipped: usize,
}

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "has", "have", "had", "can", "could", "will", "would", "may", "might", "must",
    "should", "shall", "does", "do", "did",
];

const LOWERCASE_LEADS: &[&str] =
    &["the", "a", "an", "this", "that", "these", "those", "its", "their", "it", "in", "on", "at"];

/// Built-in answer-aware generator: the pivot mention is replaced by a
/// wh-phrase chosen from its label and moved to the front of the sentence.
#[derive(Debug, Clone)]
pub struct TemplateQuestionGenerator {
    templates: WhTemplates,
}

impl TemplateQuestionGenerator {
    pub fn new(templates: WhTemplates) -> Self {
        TemplateQuestionGenerator { templates }
    }

    /// Question text for `pivot` (a span inside `sentence_span` of `doc_text`).
    pub fn question_for(&self, doc_text: &str, sentence_span: Span, pivot: &EntityMention) -> Option<String> {
        let sentence = text::slice(doc_text, sentence_span)?;
        let rel_start = pivot.span.start - sentence_span.start;
        let rel_end = pivot.span.end - sentence_span.start;
        let chars: Vec<char> = sentence.chars().collect();
        let before: String = chars[..rel_start].iter().collect();
        let after: String = chars[rel_end..].iter().collect();
        let after = after.trim_end().trim_end_matches(['.', '?', '!', ';', ':']).trim_end();
        let wh = self.templates.phrase(&pivot.label);

        let before = before.trim();
        let body = if before.is_empty() {
            after.trim_start().trim_start_matches(',').trim().to_string()
        } else {
            let mut words: Vec<String> = before.split_whitespace().map(str::to_string).collect();
            if let Some(first) = words.first_mut() {
                if LOWERCASE_LEADS.contains(&first.to_lowercase().as_str()) {
                    *first = first.to_lowercase();
                }
            }
            let aux =
                words.iter().skip(1).position(|w| AUXILIARIES.contains(&w.to_lowercase().as_str())).map(|p| p + 1);
            let front = match aux {
                Some(i) => {
                    let aux_word = words.remove(i).to_lowercase();
                    format!("{aux_word} {}", words.join(" "))
                }
                None => words.join(" "),
            };
            format!("{front} {}", after.trim())
        };
        let question = text::collapse_whitespace(&format!("{wh} {body}"));
        let question = question.trim_end_matches([',', ' ']).replace(" ,", ",");
        Some(format!("{question}?"))
    }
}

impl QuestionGenerator for TemplateQuestionGenerator {
    fn generate(&self, doc: &Document, mentions: &[EntityMention]) -> Result<QgOutput, ProviderError> {
        let mut out = QgOutput::default();
        for mention in mentions {
            let Some(sent_idx) = doc.sentence_of(mention.span) else {
                out.skipped += 1;
                continue;
            };
            let Some(text) = self.question_for(&doc.text, doc.sentences[sent_idx], mention) else {
                out.skipped += 1;
                continue;
            };
            out.questions.push(GeneratedQuestion {
                id: format!("{}:q{}", doc.id, out.questions.len() + 1),
                doc_id: doc.id.clone(),
                text,
                pivot: mention.clone(),
                answer_text: mention.surface.clone(),
                bleached: String::new(),
                embedding: Vec::new(),
                cluster_id: None,
                representative: false,
            });
        }
        if out.skipped > 0 {
            warn!(doc = %doc.id, skipped = out.skipped, "mentions outside any sentence");
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::MentionSource;

    fn mention(text: &str, surface: &str, label: &str) -> EntityMention {
        let b = text.find(surface).unwrap();
        EntityMention {
            surface: surface.into(),
            span: text::byte_range_to_span(text, b, b + surface.len()),
            label: label.into(),
            source: MentionSource::Gazetteer,
        }
    }

    fn ask(text: &str, surface: &str, label: &str) -> String {
        let doc = Document::new("d", text, vec![], vec![]).unwrap();
        let qg = TemplateQuestionGenerator::new(WhTemplates::shipped());
        let out = qg.generate(&doc, &[mention(text, surface, label)]).unwrap();
        out.questions[0].text.clone()
    }

    #[test]
    fn subject_pivot() {
        assert_eq!(
            ask("cocaine is associated with myocardial ischemia", "cocaine", "DRUG"),
            "what drug is associated with myocardial ischemia?"
        );
    }

    #[test]
    fn object_pivot_inverts_auxiliary() {
        assert_eq!(
            ask("cocaine is associated with myocardial ischemia", "myocardial ischemia", "DISEASE"),
            "what condition is cocaine associated with?"
        );
    }

    #[test]
    fn date_pivot_lowercases_determiner() {
        assert_eq!(
            ask("The agreement was signed on January 5, 2020.", "January 5, 2020", "DATE"),
            "when was the agreement signed on?"
        );
    }

    #[test]
    fn unknown_label_uses_fallback() {
        assert_eq!(ask("Acme Corp supplies the parts.", "Acme Corp", "ORG"), "what supplies the parts?");
    }

    #[test]
    fn answer_is_pivot_and_ids_are_sequential() {
        let text = "Heparin treats thrombosis. Aspirin prevents clotting.";
        let doc = Document::new("d7", text, vec![], vec![]).unwrap();
        let qg = TemplateQuestionGenerator::new(WhTemplates::shipped());
        let ms = vec![
            mention(text, "Heparin", "DRUG"),
            mention(text, "thrombosis", "DISEASE"),
            mention(text, "Aspirin", "DRUG"),
        ];
        let out = qg.generate(&doc, &ms).unwrap();
        let ids: Vec<_> = out.questions.iter().map(|q| q.id.as_str()).collect();
        assert_eq!(ids, vec!["d7:q1", "d7:q2", "d7:q3"]);
        for q in &out.questions {
            assert_eq!(q.answer_text, q.pivot.surface);
            assert!(q.text.ends_with('?'));
        }
        assert_eq!(out.questions[2].text, "what drug prevents clotting?");
    }

    #[test]
    fn empty_mentions_no_questions() {
        let doc = Document::new("d", "Nothing.", vec![], vec![]).unwrap();
        let qg = TemplateQuestionGenerator::new(WhTemplates::shipped());
        assert!(qg.generate(&doc, &[]).unwrap().questions.is_empty());
    }

    #[test]
    fn mention_across_sentences_skipped() {
        let text = "Heparin works. Fine.";
        let doc = Document::new("d", text, vec![], vec![]).unwrap();
        let qg = TemplateQuestionGenerator::new(WhTemplates::shipped());
        let bad = EntityMention {
            surface: "works. Fine".into(),
            span: Span::new(8, 19),
            label: "X".into(),
            source: MentionSource::External,
        };
        let out = qg.generate(&doc, &[bad]).unwrap();
        assert_eq!(out.skipped, 1);
        assert!(out.questions.is_empty());
    }
}
