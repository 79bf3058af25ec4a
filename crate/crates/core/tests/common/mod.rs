#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use slotforge_core::session::{Operation, SessionState};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Spherical objective of one labelling: squared distance of every non-zero
/// point to its cluster's normalized mean.
pub fn spherical_objective(vectors: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    for (v, &c) in vectors.iter().zip(labels) {
        for (s, x) in sums[c].iter_mut().zip(v) {
            *s += x;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .map(|s| {
            let n = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                s
            } else {
                s.into_iter().map(|x| x / n).collect()
            }
        })
        .collect();
    vectors.iter().zip(labels).filter(|(v, _)| v.iter().any(|x| *x != 0.0)).map(|(v, &c)| sq_dist(v, &means[c])).sum()
}

/// Every labelling of `n` points into exactly `k` non-empty clusters, in
/// canonical form (labels appear in first-occurrence order).
pub fn partitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(i: usize, n: usize, k: usize, used: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n {
            if used == k {
                out.push(cur.clone());
            }
            return;
        }
        if k - used > n - i {
            return;
        }
        for c in 0..=used.min(k - 1) {
            cur.push(c);
            go(i + 1, n, k, used.max(c + 1), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Lowest objective over all partitions, with its labelling.
pub fn exhaustive_optimum(vectors: &[Vec<f64>], k: usize) -> (f64, Vec<usize>) {
    partitions(vectors.len(), k)
        .into_iter()
        .map(|p| (spherical_objective(vectors, &p, k), p))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one partition")
}

/// Clusters as sets of ids, independent of cluster numbering.
pub fn groups(state: &SessionState) -> BTreeSet<BTreeSet<String>> {
    let mut by: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (id, &c) in &state.clusters.assignment {
        by.entry(c).or_default().insert(id.clone());
    }
    by.into_values().collect()
}

pub fn as_groups(raw: &[Vec<String>]) -> BTreeSet<BTreeSet<String>> {
    raw.iter().map(|g| g.iter().cloned().collect()).collect()
}

pub fn labels_to_groups(ids: &[String], labels: &[usize]) -> BTreeSet<BTreeSet<String>> {
    let mut by: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (id, &c) in ids.iter().zip(labels) {
        by.entry(c).or_default().insert(id.clone());
    }
    by.into_values().collect()
}

pub fn synthetic_config() -> slotforge_core::config::InductionConfig {
    let mut cfg = slotforge_core::config::InductionConfig::default();
    cfg.apply_file(&std::fs::read_to_string(fixture("synthetic.conf")).unwrap()).unwrap();
    cfg
}

pub fn synthetic_corpus() -> std::sync::Arc<slotforge_core::corpus::Corpus> {
    use slotforge_core::corpus::{load_corpus, CorpusFormat};
    std::sync::Arc::new(load_corpus(&fixture("synthetic.jsonl"), CorpusFormat::Jsonl).unwrap())
}

pub fn synthetic_session() -> SessionState {
    let corpus = synthetic_corpus();
    let providers = slotforge_core::providers::Providers::builtin_for(&corpus);
    slotforge_core::induction::run_induction(corpus, &synthetic_config(), &providers).unwrap()
}

/// A random operation that is valid for `s`.
pub fn random_op(s: &SessionState, rng: &mut ChaCha8Rng) -> Operation {
    let ids: Vec<&String> = s.questions.keys().collect();
    let pick = |rng: &mut ChaCha8Rng| ids[rng.gen_range(0..ids.len())].clone();
    loop {
        match rng.gen_range(0..10) {
            0 => {
                let vocab: Vec<&String> = s.tfidf.vocabulary.keys().collect();
                let word = vocab[rng.gen_range(0..vocab.len())].clone();
                return Operation::UpweightWords { words: vec![word], factor: [2.0, 5.0, 10.0][rng.gen_range(0..3)] };
            }
            1 if s.cluster_count() > 2 => {
                let a = rng.gen_range(0..s.cluster_count());
                let b = (a + rng.gen_range(1..s.cluster_count())) % s.cluster_count();
                return Operation::MergeClusters { ids: vec![a, b] };
            }
            2 | 3 => {
                return Operation::MoveQuestion { qid: pick(rng), to_cluster: rng.gen_range(0..s.cluster_count()) }
            }
            4 if s.questions.len() > 20 => return Operation::DeleteQuestion { qid: pick(rng) },
            5 => {
                let reps: Vec<&String> = ids.iter().copied().filter(|id| s.is_representative(id)).collect();
                if !reps.is_empty() {
                    return Operation::DemoteQuestion { qid: reps[rng.gen_range(0..reps.len())].clone() };
                }
            }
            6 => {
                let others: Vec<&String> = ids.iter().copied().filter(|id| !s.is_representative(id)).collect();
                if !others.is_empty() {
                    return Operation::PromoteQuestion { qid: others[rng.gen_range(0..others.len())].clone() };
                }
            }
            7 => {
                let source = &s.questions[&pick(rng)];
                return Operation::EditQuestion { qid: pick(rng), new_text: format!("{} now", source.text) };
            }
            8 => {
                let source = &s.questions[&pick(rng)];
                let target = rng.gen_bool(0.5).then(|| rng.gen_range(0..s.cluster_count()));
                return Operation::AddQuestion {
                    text: source.text.clone(),
                    target_cluster: target,
                    doc_id: Some(source.doc_id.clone()),
                    answer: Some(source.answer_text.clone()),
                };
            }
            9 => {
                let source = &s.questions[&pick(rng)];
                return Operation::AddQuestion {
                    text: format!("What about {}?", source.pivot.surface),
                    target_cluster: None,
                    doc_id: None,
                    answer: None,
                };
            }
            _ => {}
        }
    }
}
