//! HDBSCAN: core distances → mutual reachability → MST → single-linkage
//! hierarchy → condensed tree → excess-of-mass selection.

use serde::{Deserialize, Serialize};

use super::ClusteringError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdbscanConfig {
    pub min_cluster_size: usize,
    /// Defaults to `min_cluster_size` when absent.
    pub min_samples: Option<usize>,
}

impl Default for HdbscanConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: 50,
            min_samples: None,
        }
    }
}

impl HdbscanConfig {
    pub fn validate(&self) -> Result<(), ClusteringError> {
        if self.min_cluster_size < 2 {
            return Err(ClusteringError::InvalidConfig("min_cluster_size must be >= 2".into()));
        }
        if self.min_samples == Some(0) {
            return Err(ClusteringError::InvalidConfig("min_samples must be >= 1".into()));
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance to the k-th nearest point, the point itself counting as the first.
fn core_distances(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let k = k.min(n).max(1);
    let mut buf = vec![0.0; n];
    points
        .iter()
        .map(|p| {
            for (b, q) in buf.iter_mut().zip(points) {
                *b = sq_dist(p, q);
            }
            let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect()
}

/// Dense Prim over mutual-reachability distances; returns n − 1 edges (a, b, w).
fn mst(points: &[Vec<f64>], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = sq_dist(&points[current], &points[j]).sqrt();
            let mr = d.max(core[current]).max(core[j]);
            if mr < best[j] {
                best[j] = mr;
                from[j] = current;
            }
            if best[j] < next_w || next == usize::MAX {
                next_w = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, next_w));
        current = next;
    }
    edges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Merge node: children, merge distance, size.
#[derive(Debug, Clone, Copy)]
struct Merge {
    left: usize,
    right: usize,
    dist: f64,
    size: usize,
}

/// Single-linkage dendrogram; node ids ≥ n are merges (n + i for the i-th).
fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.min(a.1).cmp(&b.0.min(b.1))));
    // union-find over 2n − 1 nodes; each root carries its dendrogram node id
    let mut uf = UnionFind::new(2 * n);
    let mut size = vec![1usize; 2 * n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (a, b, w) in edges {
        let ra = uf.find(a);
        let rb = uf.find(b);
        let id = n + merges.len();
        merges.push(Merge {
            left: ra,
            right: rb,
            dist: w,
            size: size[ra] + size[rb],
        });
        size[id] = size[ra] + size[rb];
        uf.parent[ra] = id;
        uf.parent[rb] = id;
    }
    merges
}

/// Row of the condensed tree: `child` < n is a point, otherwise a cluster label.
#[derive(Debug, Clone, Copy)]
struct Condensed {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn lambda_of(dist: f64) -> f64 {
    if dist > 0.0 {
        1.0 / dist
    } else {
        f64::INFINITY
    }
}

fn condense(n: usize, merges: &[Merge], min_size: usize) -> Vec<Condensed> {
    let node_size = |id: usize| if id < n { 1 } else { merges[id - n].size };
    let leaves = |id: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                stack.push(merges[x - n].right);
                stack.push(merges[x - n].left);
            }
        }
        out
    };
    let root = n + merges.len() - 1;
    let mut next_label = n + 1;
    let mut out = Vec::new();
    // (dendrogram node, condensed cluster it belongs to)
    let mut stack = vec![(root, n)];
    while let Some((node, label)) = stack.pop() {
        let m = merges[node - n];
        let lambda = lambda_of(m.dist);
        let (ls, rs) = (node_size(m.left), node_size(m.right));
        match (ls >= min_size, rs >= min_size) {
            (true, true) => {
                for (child, size) in [(m.left, ls), (m.right, rs)] {
                    let new_label = next_label;
                    next_label += 1;
                    out.push(Condensed {
                        parent: label,
                        child: new_label,
                        lambda,
                        size,
                    });
                    stack.push((child, new_label));
                }
            }
            (false, false) => {
                for side in [m.left, m.right] {
                    for p in leaves(side) {
                        out.push(Condensed {
                            parent: label,
                            child: p,
                            lambda,
                            size: 1,
                        });
                    }
                }
            }
            (big_left, _) => {
                let (keep, drop) = if big_left { (m.left, m.right) } else { (m.right, m.left) };
                for p in leaves(drop) {
                    out.push(Condensed {
                        parent: label,
                        child: p,
                        lambda,
                        size: 1,
                    });
                }
                if keep < n {
                    out.push(Condensed {
                        parent: label,
                        child: keep,
                        lambda,
                        size: 1,
                    });
                } else {
                    stack.push((keep, label));
                }
            }
        }
    }
    out
}

/// Returns, per point, the index of its cluster among the selected ones
/// (in an arbitrary but deterministic order), or −1.
fn select_and_label(n: usize, tree: &[Condensed]) -> Vec<i64> {
    let root = n;
    let max_label = tree.iter().map(|c| c.parent.max(c.child)).max().unwrap_or(root).max(root);
    let count = max_label - root + 1;
    let idx = |label: usize| label - root;

    let mut birth = vec![0.0f64; count];
    let mut parent_of = vec![usize::MAX; count];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); count];
    for c in tree.iter().filter(|c| c.child >= root) {
        birth[idx(c.child)] = c.lambda;
        parent_of[idx(c.child)] = c.parent;
        children[idx(c.parent)].push(c.child);
    }
    let mut stability = vec![0.0f64; count];
    for c in tree {
        let b = birth[idx(c.parent)];
        let gain = if c.lambda == b { 0.0 } else { c.lambda - b };
        stability[idx(c.parent)] += gain * c.size as f64;
    }

    let mut selected = vec![false; count];
    if children[0].is_empty() {
        // no split ever produced two large-enough groups: the whole set is one cluster
        return vec![0; n];
    }
    for s in selected.iter_mut().skip(1) {
        *s = true;
    }
    // children carry larger labels than their parents
    for label in (root + 1..=max_label).rev() {
        let i = idx(label);
        let child_sum: f64 = children[i].iter().map(|&c| stability[idx(c)]).sum();
        if !children[i].is_empty() && child_sum > stability[i] {
            selected[i] = false;
            stability[i] = child_sum;
        } else {
            let mut stack = children[i].clone();
            while let Some(c) = stack.pop() {
                selected[idx(c)] = false;
                stack.extend(children[idx(c)].iter().copied());
            }
        }
    }

    let mut labels = vec![-1i64; n];
    for c in tree.iter().filter(|c| c.child < root) {
        let mut cluster = c.parent;
        loop {
            if selected[idx(cluster)] {
                labels[c.child] = cluster as i64;
                break;
            }
            if cluster == root {
                break;
            }
            cluster = parent_of[idx(cluster)];
        }
    }
    labels
}

/// Cluster ids renumbered 0..k−1 in order of each cluster's first member.
pub(crate) fn relabel_by_first_member(raw: &[i64]) -> Vec<i64> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let next = map.len() as i64;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

/// Raw HDBSCAN labels (−1 noise) over `points`.
pub fn hdbscan_labels(points: &[Vec<f64>], config: &HdbscanConfig) -> Result<Vec<i64>, ClusteringError> {
    config.validate()?;
    let n = points.len();
    if let Some(d) = points.first().map(Vec::len) {
        if points.iter().any(|p| p.len() != d) {
            return Err(ClusteringError::LengthMismatch);
        }
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusteringError::NonFinite);
    }
    if n < config.min_cluster_size || n < 2 {
        return Ok(vec![-1; n]);
    }
    let core = core_distances(points, config.samples());
    let edges = mst(points, &core);
    let merges = single_linkage(n, edges);
    let tree = condense(n, &merges, config.min_cluster_size);
    Ok(relabel_by_first_member(&select_and_label(n, &tree)))
}
