//! Cluster-to-slot mapping by fuzzy answer matching, and per-slot scoring.

mod matching;
mod table;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::text;

pub use matching::{max_matching, Edge};
pub use table::{render_matrix, render_report};

/// Slot name given to clusters with nothing to match.
pub const UNMAPPED: &str = "∅";

/// `1 - levenshtein / max_len` over normalized strings, in characters.
pub fn fuzzy_score(a: &str, b: &str) -> f64 {
    let a: Vec<char> = text::normalize(a).chars().collect();
    let b: Vec<char> = text::normalize(b).chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMapping {
    pub cluster_to_slot: BTreeMap<usize, String>,
    pub scores: BTreeMap<usize, f64>,
}

impl SlotMapping {
    pub fn slot_of(&self, cluster: usize) -> Option<&str> {
        self.cluster_to_slot.get(&cluster).map(String::as_str)
    }

    /// Clusters mapped to `slot`, ascending.
    pub fn clusters_for(&self, slot: &str) -> Vec<usize> {
        self.cluster_to_slot.iter().filter(|(_, s)| s.as_str() == slot).map(|(c, _)| *c).collect()
    }
}

/// A predicted answer from one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Candidate {
    pub doc_id: String,
    pub answer: String,
}

/// Best fuzzy score of `answer` against the gold answers of `slot` in `doc_id`,
/// falling back to every document when that one has no fill for the slot.
pub fn slot_affinity(corpus: &Corpus, doc_id: &str, answer: &str, slot: &str) -> f64 {
    let local = corpus.document(doc_id).filter(|d| d.has_slot(slot)).map(|d| d.gold_answers(slot));
    let golds = local.unwrap_or_else(|| corpus.documents.iter().flat_map(|d| d.gold_answers(slot)).collect());
    golds.iter().map(|g| fuzzy_score(answer, g)).fold(0.0, f64::max)
}

/// The gold slot of `doc_id` whose answers best match `answer`, with the
/// score, when it reaches `theta`. Ties go to the smaller slot name.
pub fn gold_slot(corpus: &Corpus, doc_id: &str, answer: &str, theta: f64) -> Option<(String, f64)> {
    let doc = corpus.document(doc_id)?;
    let mut best: Option<(&str, f64)> = None;
    for slot in &corpus.slot_inventory {
        let score = doc.gold_answers(slot).iter().map(|g| fuzzy_score(answer, g)).fold(0.0, f64::max);
        if score >= theta && best.is_none_or(|(_, b)| score > b) {
            best = Some((slot, score));
        }
    }
    best.map(|(s, score)| (s.to_string(), score))
}

/// Maps each cluster to the slot whose gold answers its candidates match best
/// on average. Ties go to the lexicographically smaller slot.
pub fn map_clusters(candidates: &BTreeMap<usize, Vec<Candidate>>, corpus: &Corpus) -> SlotMapping {
    let mut mapping = SlotMapping { cluster_to_slot: BTreeMap::new(), scores: BTreeMap::new() };
    for (&cluster, cands) in candidates {
        let mut best: Option<(&str, f64)> = None;
        if !cands.is_empty() {
            for slot in &corpus.slot_inventory {
                let total: f64 = cands.iter().map(|c| slot_affinity(corpus, &c.doc_id, &c.answer, slot)).sum();
                let score = total / cands.len() as f64;
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((slot, score));
                }
            }
        }
        let (slot, score) = best.unwrap_or((UNMAPPED, 0.0));
        mapping.cluster_to_slot.insert(cluster, slot.to_string());
        mapping.scores.insert(cluster, score);
    }
    mapping
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl SlotScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        SlotScores { tp, fp, fn_, precision, recall, f1: harmonic(precision, recall) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_slot: BTreeMap<String, SlotScores>,
    pub micro: SlotScores,
    #[serde(rename = "macro")]
    pub macro_avg: MacroScores,
    /// Milliseconds since the epoch; 0 for the initial induction.
    pub timestamp: u64,
    pub action_count: usize,
}

impl EvaluationReport {
    /// Average over runs: counts are summed, precision, recall and F1 are
    /// arithmetic means. A slot missing from a run counts as zero there.
    pub fn mean(reports: &[EvaluationReport]) -> EvaluationReport {
        let n = reports.len().max(1) as f64;
        let avg = |scores: Vec<&SlotScores>| {
            let mut out = SlotScores::from_counts(0, 0, 0);
            for s in scores {
                out.tp += s.tp;
                out.fp += s.fp;
                out.fn_ += s.fn_;
                out.precision += s.precision / n;
                out.recall += s.recall / n;
                out.f1 += s.f1 / n;
            }
            out
        };
        let slots: BTreeSet<&String> = reports.iter().flat_map(|r| r.per_slot.keys()).collect();
        let per_slot = slots
            .into_iter()
            .map(|slot| (slot.clone(), avg(reports.iter().filter_map(|r| r.per_slot.get(slot)).collect())))
            .collect();
        let mut macro_avg = MacroScores::default();
        for r in reports {
            macro_avg.precision += r.macro_avg.precision / n;
            macro_avg.recall += r.macro_avg.recall / n;
            macro_avg.f1 += r.macro_avg.f1 / n;
        }
        EvaluationReport {
            per_slot,
            micro: avg(reports.iter().map(|r| &r.micro).collect()),
            macro_avg,
            timestamp: 0,
            action_count: 0,
        }
    }

    pub fn from_slot_scores(per_slot: BTreeMap<String, SlotScores>) -> Self {
        let (tp, fp, fn_) = per_slot.values().fold((0, 0, 0), |(a, b, c), s| (a + s.tp, b + s.fp, c + s.fn_));
        let n = per_slot.len().max(1) as f64;
        let macro_avg = MacroScores {
            precision: per_slot.values().map(|s| s.precision).sum::<f64>() / n,
            recall: per_slot.values().map(|s| s.recall).sum::<f64>() / n,
            f1: per_slot.values().map(|s| s.f1).sum::<f64>() / n,
        };
        EvaluationReport {
            micro: SlotScores::from_counts(tp, fp, fn_),
            per_slot,
            macro_avg,
            timestamp: 0,
            action_count: 0,
        }
    }
}

/// One predicted slot filler.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub slot: String,
    pub answer: String,
}

/// Scores predictions against the corpus gold. Within each (document, slot)
/// a prediction counts as a hit when it is matched to a distinct gold answer
/// with fuzzy score at least `theta`; the matching has maximum cardinality.
pub fn evaluate(predictions: &[Prediction], corpus: &Corpus, theta: f64) -> EvaluationReport {
    let mut grouped: BTreeMap<(&str, &str), Vec<&str>> = BTreeMap::new();
    for p in predictions {
        if corpus.slot_inventory.contains(&p.slot) {
            grouped.entry((p.doc_id.as_str(), p.slot.as_str())).or_default().push(&p.answer);
        }
    }
    let mut counts: BTreeMap<&str, (usize, usize, usize)> =
        corpus.slot_inventory.iter().map(|s| (s.as_str(), (0, 0, 0))).collect();
    let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
    for doc in &corpus.documents {
        for slot in &corpus.slot_inventory {
            let golds = doc.gold_answers(slot);
            let preds = grouped.get(&(doc.id.as_str(), slot.as_str())).cloned().unwrap_or_default();
            seen.insert((doc.id.as_str(), slot.as_str()));
            let tp = match_count(&preds, &golds, theta);
            let entry = counts.get_mut(slot.as_str()).expect("inventory slot");
            entry.0 += tp;
            entry.1 += preds.len() - tp;
            entry.2 += golds.len() - tp;
        }
    }
    // predictions for documents outside the corpus are false positives
    for ((doc, slot), preds) in &grouped {
        if !seen.contains(&(*doc, *slot)) {
            counts.get_mut(slot).expect("inventory slot").1 += preds.len();
        }
    }
    let per_slot =
        counts.into_iter().map(|(s, (tp, fp, fn_))| (s.to_string(), SlotScores::from_counts(tp, fp, fn_))).collect();
    EvaluationReport::from_slot_scores(per_slot)
}

/// Size of the best one-to-one matching between predictions and gold answers
/// over pairs scoring at least `theta`.
pub fn match_count(preds: &[&str], golds: &[String], theta: f64) -> usize {
    let mut edges = Vec::new();
    for (p, pred) in preds.iter().enumerate() {
        for (g, gold) in golds.iter().enumerate() {
            let score = fuzzy_score(pred, gold);
            if score >= theta {
                edges.push(Edge { left: p, right: g, score });
            }
        }
    }
    max_matching(preds.len(), golds.len(), &edges).len()
}

/// A `(subject, relation, object)` extraction tied to a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub doc_id: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

/// Nearest inventory slot to a relation string; ties to the smaller name.
pub fn nearest_slot<'a>(relation: &str, slots: &'a BTreeSet<String>) -> Option<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for slot in slots {
        let s = fuzzy_score(relation, slot);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((slot, s));
        }
    }
    best.map(|(s, _)| s)
}

/// Scores triples by treating each object as a prediction for the slot
/// nearest to its relation.
pub fn map_triples(triples: &[Triple], corpus: &Corpus, theta: f64) -> EvaluationReport {
    let predictions: Vec<Prediction> = triples
        .iter()
        .filter_map(|t| {
            nearest_slot(&t.relation, &corpus.slot_inventory).map(|slot| Prediction {
                doc_id: t.doc_id.clone(),
                slot: slot.to_string(),
                answer: t.object.clone(),
            })
        })
        .collect();
    evaluate(&predictions, corpus, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Answer, Document, GoldFill};

    fn doc(id: &str, fills: &[(&str, &[&str])]) -> Document {
        let gold = fills
            .iter()
            .map(|(slot, answers)| GoldFill {
                slot: slot.to_string(),
                answers: answers.iter().map(|a| Answer::Text(a.to_string())).collect(),
            })
            .collect();
        Document::new(id, "placeholder text.", gold, vec![]).unwrap()
    }

    #[test]
    fn fuzzy_examples() {
        assert_eq!(fuzzy_score("Thrombosis", "thrombosis"), 1.0);
        assert_eq!(fuzzy_score("", "heparin"), 0.0);
        assert_eq!(fuzzy_score("", "  "), 1.0);
        assert!((fuzzy_score("heparin", "heparin sodium") - 0.5).abs() < 1e-12);
        assert_eq!(fuzzy_score("  Heparin\t sodium ", "heparin sodium"), 1.0);
    }

    #[test]
    fn mean_report_sums_counts_and_averages_scores() {
        let a =
            EvaluationReport::from_slot_scores(BTreeMap::from([("S".to_string(), SlotScores::from_counts(2, 1, 0))]));
        let b =
            EvaluationReport::from_slot_scores(BTreeMap::from([("S".to_string(), SlotScores::from_counts(0, 0, 1))]));
        let m = EvaluationReport::mean(&[a, b]);
        let s = &m.per_slot["S"];
        assert_eq!((s.tp, s.fp, s.fn_), (2, 1, 1));
        assert!((s.f1 - 0.4).abs() < 1e-12);
        assert!((m.micro.f1 - 0.4).abs() < 1e-12);
        assert!((m.macro_avg.f1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gold_slot_is_document_local() {
        let corpus = Corpus::from_documents(vec![
            doc("d1", &[("Drug", &["heparin"]), ("Cause", &["thrombosis"])]),
            doc("d2", &[("Drug", &["aspirin"])]),
        ])
        .unwrap();
        assert_eq!(gold_slot(&corpus, "d1", "Heparin", 0.8), Some(("Drug".into(), 1.0)));
        assert_eq!(gold_slot(&corpus, "d2", "thrombosis", 0.8), None);
        assert_eq!(gold_slot(&corpus, "d9", "heparin", 0.8), None);
    }

    #[test]
    fn exact_answers_map_with_score_one() {
        let corpus = Corpus::from_documents(vec![
            doc("d1", &[("Agreement", &["January 5, 2020"]), ("Party", &["Acme"])]),
            doc("d2", &[("Agreement", &["March 1, 2019"]), ("Party", &["Globex"])]),
        ])
        .unwrap();
        let cands = BTreeMap::from([
            (
                0,
                vec![
                    Candidate { doc_id: "d1".into(), answer: "January 5, 2020".into() },
                    Candidate { doc_id: "d2".into(), answer: "march 1, 2019".into() },
                ],
            ),
            (1, vec![]),
        ]);
        let m = map_clusters(&cands, &corpus);
        assert_eq!(m.slot_of(0), Some("Agreement"));
        assert_eq!(m.scores[&0], 1.0);
        assert_eq!(m.slot_of(1), Some(UNMAPPED));
    }

    #[test]
    fn score_matrix_argmax() {
        // c0 scores (0.9, 0.3) and c1 scores (0.4, 0.8) against (s1, s2)
        let corpus =
            Corpus::from_documents(vec![doc("d", &[("s1", &["abcdefghij"]), ("s2", &["klmnopqrst"])])]).unwrap();
        let cands = BTreeMap::from([
            (0, vec![Candidate { doc_id: "d".into(), answer: "abcdefghiX".into() }]),
            (1, vec![Candidate { doc_id: "d".into(), answer: "klmnopqrXX".into() }]),
        ]);
        for (c, slot, expected) in [(0, "s1", 0.9), (1, "s2", 0.8)] {
            let got = slot_affinity(&corpus, "d", &cands[&c][0].answer, slot);
            assert!((got - expected).abs() < 1e-12);
        }
        let m = map_clusters(&cands, &corpus);
        assert_eq!(m.slot_of(0), Some("s1"));
        assert_eq!(m.slot_of(1), Some("s2"));
    }

    #[test]
    fn tie_goes_to_smaller_slot_name() {
        let corpus = Corpus::from_documents(vec![doc("d", &[("beta", &["x"]), ("alpha", &["x"])])]).unwrap();
        let cands = BTreeMap::from([(0, vec![Candidate { doc_id: "d".into(), answer: "x".into() }])]);
        assert_eq!(map_clusters(&cands, &corpus).slot_of(0), Some("alpha"));
    }

    #[test]
    fn falls_back_to_any_document() {
        let corpus = Corpus::from_documents(vec![doc("d1", &[("Cause", &["thrombosis"])]), doc("d2", &[])]).unwrap();
        assert_eq!(slot_affinity(&corpus, "d2", "thrombosis", "Cause"), 1.0);
    }

    #[test]
    fn counts_and_formulas() {
        let corpus = Corpus::from_documents(vec![doc("d", &[("S", &["alpha", "beta"])])]).unwrap();
        let preds: Vec<Prediction> = ["alpha", "beta", "zzzzz"]
            .iter()
            .map(|a| Prediction { doc_id: "d".into(), slot: "S".into(), answer: a.to_string() })
            .collect();
        let r = evaluate(&preds, &corpus, 0.8);
        let s = &r.per_slot["S"];
        assert_eq!((s.tp, s.fp, s.fn_), (2, 1, 0));
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let corpus = Corpus::from_documents(vec![
            doc("d1", &[("A", &["x1"]), ("B", &["y1"])]),
            doc("d2", &[("A", &["x2"]), ("B", &["y2"])]),
        ])
        .unwrap();
        let preds: Vec<Prediction> = [("d1", "A", "x1"), ("d1", "B", "y1"), ("d2", "A", "x2"), ("d2", "B", "y2")]
            .iter()
            .map(|(d, s, a)| Prediction { doc_id: d.to_string(), slot: s.to_string(), answer: a.to_string() })
            .collect();
        let r = evaluate(&preds, &corpus, 0.8);
        for s in r.per_slot.values() {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.micro.f1, 1.0);
        assert_eq!(r.macro_avg.f1, 1.0);
    }

    #[test]
    fn gold_consumed_once() {
        let corpus = Corpus::from_documents(vec![doc("d", &[("S", &["thrombosis"])])]).unwrap();
        let preds: Vec<Prediction> =
            (0..2).map(|_| Prediction { doc_id: "d".into(), slot: "S".into(), answer: "thrombosis".into() }).collect();
        let s = &evaluate(&preds, &corpus, 0.8).per_slot["S"];
        assert_eq!((s.tp, s.fp, s.fn_), (1, 1, 0));
    }

    #[test]
    fn triples() {
        let corpus = Corpus::from_documents(vec![doc("d", &[("Cause", &["thrombosis"])])]).unwrap();
        let t = Triple {
            doc_id: "d".into(),
            subject: "heparin".into(),
            relation: "cause".into(),
            object: "thrombosis".into(),
        };
        assert_eq!(map_triples(&[t], &corpus, 0.8).per_slot["Cause"].tp, 1);
        let empty = map_triples(&[], &corpus, 0.8);
        assert_eq!(empty.micro.tp + empty.micro.fp, 0);
        assert_eq!(empty.micro.f1, 0.0);

        let slots: BTreeSet<String> = ["Expiry".to_string(), "Name".to_string()].into();
        assert_eq!(nearest_slot("expires-on", &slots), Some("Expiry"));
    }
}
