use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tfidf::{dot, norm};
use super::InductionError;

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

/// Index-based result of one k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Objective after every assignment and every centroid update.
    pub trace: Vec<f64>,
}

/// A clustering keyed by question id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub centroids: Vec<Vec<f64>>,
    /// Clusters whose members sum to the zero vector.
    pub degenerate: Vec<bool>,
    pub assignment: BTreeMap<String, usize>,
    pub inertia: f64,
    pub seed: u64,
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties go to the lower cluster id.
pub fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(x, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Normalized mean of the given vectors, or `None` when it is zero.
pub fn unit_mean<'a>(members: impl Iterator<Item = &'a [f64]>, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    for v in members {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = norm(&sum);
    if n == 0.0 {
        return None;
    }
    Some(sum.into_iter().map(|x| x / n).collect())
}

fn objective(vectors: &[Vec<f64>], live: &[usize], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    live.iter().map(|&i| sq_dist(&vectors[i], &centroids[assignment[i]])).sum()
}

fn plus_plus_init(vectors: &[Vec<f64>], live: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![live[rng.gen_range(0..live.len())]];
    while chosen.len() < k {
        let d2: Vec<f64> = live
            .iter()
            .map(|&i| chosen.iter().map(|&c| sq_dist(&vectors[i], &vectors[c])).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = None;
            for (j, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(live[j]);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive mass")
        } else {
            // every remaining point duplicates a chosen one
            let rest: Vec<usize> = live.iter().copied().filter(|i| !chosen.contains(i)).collect();
            rest[rng.gen_range(0..rest.len())]
        };
        chosen.push(pick);
    }
    chosen.into_iter().map(|i| vectors[i].clone()).collect()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(vectors: &[Vec<f64>], live: &[usize], assignment: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &i in live {
            sizes[assignment[i]] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut best: Option<(usize, f64)> = None;
        for &i in live {
            if sizes[assignment[i]] < 2 {
                continue;
            }
            let d = sq_dist(&vectors[i], &centroids[assignment[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((i, _)) = best else { return };
        assignment[i] = empty;
        centroids[empty] = vectors[i].clone();
    }
}

/// Spherical k-means: k-means++ seeding, then Lloyd iterations on unit
/// vectors with centroids re-normalized after each update.
///
/// Zero vectors do not take part; they are attached afterwards to the
/// cluster of their nearest live neighbour, which (all distances being equal)
/// is the cluster of the first live point.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansRun, InductionError> {
    let live: Vec<usize> = (0..vectors.len()).filter(|&i| !is_zero(&vectors[i])).collect();
    if k == 0 || k > live.len() {
        return Err(InductionError::BadK { k, available: live.len() });
    }
    let dim = vectors[live[0]].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(vectors, &live, k, &mut rng);
    let mut assignment = vec![0usize; vectors.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut settled = false;

    for iter in 0..MAX_ITERATIONS {
        iterations = iter + 1;
        let mut next = assignment.clone();
        for &i in &live {
            next[i] = nearest(&vectors[i], &centroids);
        }
        repair_empty(vectors, &live, &mut next, &mut centroids);
        let changed = iter == 0 || next != assignment;
        assignment = next;
        push_checked(&mut trace, objective(vectors, &live, &assignment, &centroids));
        if !changed || settled {
            break;
        }

        let mut shift: f64 = 0.0;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members = live.iter().filter(|&&i| assignment[i] == c).map(|&i| vectors[i].as_slice());
            if let Some(mean) = unit_mean(members, dim) {
                shift = shift.max(sq_dist(&mean, centroid).sqrt());
                *centroid = mean;
            }
        }
        push_checked(&mut trace, objective(vectors, &live, &assignment, &centroids));
        // one more assignment pass against the settled centroids, then stop
        settled = shift < SHIFT_TOLERANCE;
    }

    if let Some(&anchor) = live.first() {
        for i in 0..vectors.len() {
            if is_zero(&vectors[i]) {
                assignment[i] = assignment[anchor];
            }
        }
    }
    let inertia = objective(vectors, &live, &assignment, &centroids);
    Ok(KMeansRun { k, centroids, assignment, inertia, seed, iterations, trace })
}

fn push_checked(trace: &mut Vec<f64>, value: f64) {
    if let Some(&prev) = trace.last() {
        debug_assert!(value <= prev + 1e-9, "k-means objective rose from {prev} to {value}");
    }
    trace.push(value);
}

/// Runs `kmeans` once per seed and keeps the lowest inertia; ties keep the
/// earlier seed.
pub fn kmeans_best(
    vectors: &[Vec<f64>],
    k: usize,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<KMeansRun, InductionError> {
    let mut best: Option<KMeansRun> = None;
    for seed in seeds {
        let run = kmeans(vectors, k, seed)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia - 1e-12) {
            best = Some(run);
        }
    }
    best.ok_or(InductionError::BadK { k, available: 0 })
}

/// Uniform random cluster ids.
pub fn random_clustering(n: usize, k: usize, seed: u64) -> Result<Vec<usize>, InductionError> {
    if k == 0 {
        return Err(InductionError::BadK { k, available: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| rng.gen_range(0..k)).collect())
}

impl ClusterModel {
    /// Builds a model from an index assignment, computing centroids and
    /// inertia from the members. Zero vectors are ignored for both.
    pub fn from_assignment(ids: &[String], vectors: &[Vec<f64>], assignment: &[usize], k: usize, seed: u64) -> Self {
        let map = ids.iter().cloned().zip(assignment.iter().copied()).collect();
        let mut model =
            ClusterModel { k, centroids: Vec::new(), degenerate: Vec::new(), assignment: map, inertia: 0.0, seed };
        let by_id: BTreeMap<&str, &[f64]> =
            ids.iter().map(String::as_str).zip(vectors.iter().map(Vec::as_slice)).collect();
        model.refresh(|id| by_id.get(id).copied());
        model
    }

    /// Recomputes centroids, degenerate flags and inertia from members.
    pub fn refresh<'a>(&mut self, embedding: impl Fn(&str) -> Option<&'a [f64]>) {
        let dim = self.assignment.keys().find_map(|id| embedding(id)).map_or(0, <[f64]>::len);
        let mut centroids = Vec::with_capacity(self.k);
        let mut degenerate = Vec::with_capacity(self.k);
        for c in 0..self.k {
            let members = self.assignment.iter().filter(|(_, &a)| a == c).filter_map(|(id, _)| embedding(id));
            match unit_mean(members, dim) {
                Some(m) => {
                    centroids.push(m);
                    degenerate.push(false);
                }
                None => {
                    centroids.push(vec![0.0; dim]);
                    degenerate.push(true);
                }
            }
        }
        self.inertia = self
            .assignment
            .iter()
            .filter_map(|(id, &c)| embedding(id).filter(|v| !is_zero(v)).map(|v| sq_dist(v, &centroids[c])))
            .sum();
        self.centroids = centroids;
        self.degenerate = degenerate;
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &c)| c == cluster).map(|(id, _)| id.as_str()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in self.assignment.values() {
            if c < self.k {
                sizes[c] += 1;
            }
        }
        sizes
    }

    /// Nearest non-degenerate centroid to `v`; ties to the lower id.
    pub fn nearest_centroid(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (c, centroid) in self.centroids.iter().enumerate() {
            if self.degenerate.get(c).copied().unwrap_or(false) {
                continue;
            }
            let s = dot(v, centroid);
            if s > best_sim {
                best = c;
                best_sim = s;
            }
        }
        best
    }
}
