/// A candidate pairing between prediction `left` and gold answer `right`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub left: usize,
    pub right: usize,
    pub score: f64,
}

/// Maximum-cardinality bipartite matching by augmenting paths.
///
/// Predictions are visited in descending order of their best edge score and
/// try gold answers best-first, so when no conflict arises the result is the
/// greedy matching; conflicts are resolved by augmenting instead of dropping
/// the later prediction. Returns `(left, right)` pairs sorted by `left`.
pub fn max_matching(n_left: usize, n_right: usize, edges: &[Edge]) -> Vec<(usize, usize)> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_left];
    for e in edges {
        if e.left < n_left && e.right < n_right {
            adj[e.left].push((e.right, e.score));
        }
    }
    for list in &mut adj {
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    }
    let mut order: Vec<usize> = (0..n_left).filter(|&l| !adj[l].is_empty()).collect();
    order.sort_by(|&a, &b| adj[b][0].1.total_cmp(&adj[a][0].1).then(a.cmp(&b)));

    let mut owner: Vec<Option<usize>> = vec![None; n_right];
    for &l in &order {
        let mut visited = vec![false; n_right];
        augment(l, &adj, &mut owner, &mut visited);
    }
    let mut pairs: Vec<(usize, usize)> = owner.iter().enumerate().filter_map(|(r, o)| o.map(|l| (l, r))).collect();
    pairs.sort();
    pairs
}

fn augment(l: usize, adj: &[Vec<(usize, f64)>], owner: &mut [Option<usize>], visited: &mut [bool]) -> bool {
    for &(r, _) in &adj[l] {
        if visited[r] {
            continue;
        }
        visited[r] = true;
        if owner[r].is_none_or(|other| augment(other, adj, owner, visited)) {
            owner[r] = Some(l);
            return true;
        }
    }
    false
}
