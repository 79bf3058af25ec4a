use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tfidf::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedQuestion {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    /// Cluster id to its top-ranked questions.
    pub global_reps: BTreeMap<usize, Vec<RankedQuestion>>,
    /// Document id to cluster id to representative question ids.
    pub doc_reps: BTreeMap<String, BTreeMap<usize, Vec<String>>>,
    pub tau: f64,
    pub top_k: usize,
}

/// Scores are compared at 1e-12 resolution so that summation rounding does
/// not override the id tie-break.
fn rank_key(score: f64) -> f64 {
    (score * 1e12).round()
}

fn rank_order(a: &RankedQuestion, b: &RankedQuestion) -> std::cmp::Ordering {
    rank_key(b.score).total_cmp(&rank_key(a.score)).then_with(|| a.id.cmp(&b.id))
}

/// Scores each member by its mean cosine similarity to the other members and
/// returns the best `top_k`. A lone member scores 1.
pub fn global_representatives(members: &[(&str, &[f64])], top_k: usize) -> Vec<RankedQuestion> {
    let n = members.len();
    let mut ranked: Vec<RankedQuestion> = members
        .iter()
        .enumerate()
        .map(|(i, (id, v))| {
            let score = if n == 1 {
                1.0
            } else {
                let total: f64 =
                    members.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, (_, w))| cosine(v, w)).sum();
                total / (n - 1) as f64
            };
            RankedQuestion { id: id.to_string(), score }
        })
        .collect();
    ranked.sort_by(rank_order);
    ranked.truncate(top_k);
    ranked
}

/// Ids of the questions whose cosine with `mean` reaches `tau`, ranked.
pub fn document_representatives(questions: &[(&str, &[f64])], mean: &[f64], tau: f64) -> Vec<String> {
    let mut kept: Vec<RankedQuestion> = questions
        .iter()
        .map(|(id, v)| RankedQuestion { id: id.to_string(), score: cosine(v, mean) })
        .filter(|r| r.score >= tau)
        .collect();
    kept.sort_by(rank_order);
    kept.into_iter().map(|r| r.id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_scores_one() {
        let v = [0.0, 1.0];
        let r = global_representatives(&[("q", &v)], 5);
        assert_eq!(r, vec![RankedQuestion { id: "q".into(), score: 1.0 }]);
    }

    #[test]
    fn outlier_ranks_last() {
        let a = [1.0, 0.0];
        let o = [0.0, 1.0];
        let r = global_representatives(&[("z", &o), ("b", &a), ("a", &a)], 3);
        let ids: Vec<_> = r.iter().map(|x| x.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "z"]);
        assert!((r[0].score - 0.5).abs() < 1e-12);
        assert_eq!(r[2].score, 0.0);
    }

    #[test]
    fn document_threshold() {
        // unit vectors at cosines 0.9, 0.5, 0.34, 0.2 from the mean (1, 0)
        let vs: Vec<Vec<f64>> = [0.9f64, 0.5, 0.34, 0.2].iter().map(|c| vec![*c, (1.0 - c * c).sqrt()]).collect();
        let qs: Vec<(&str, &[f64])> =
            ["q1", "q2", "q3", "q4"].iter().zip(&vs).map(|(id, v)| (*id, v.as_slice())).collect();
        assert_eq!(document_representatives(&qs, &[1.0, 0.0], 0.35), vec!["q1", "q2"]);
        assert_eq!(document_representatives(&qs[..1], &vs[0], 1.0 - 1e-12), vec!["q1"]);
        assert!(document_representatives(&[("x", &[0.0, 1.0])], &[1.0, 0.0], 0.35).is_empty());
    }
}
